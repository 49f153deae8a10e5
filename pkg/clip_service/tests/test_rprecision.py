import numpy as np
import pytest
import torch

from clip_service.encoders import build_encoder
from clip_service.rprecision import eval_rprecision, read_pgm


def write_pgm(path, image):
    q = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(q.tobytes())


def make_renders(tmp_path, name, seed, count=3, res=32):
    rng = np.random.default_rng(seed)
    mesh_dir = tmp_path / "renders" / name
    mesh_dir.mkdir(parents=True, exist_ok=True)
    images = rng.random((count, res, res))
    for i, img in enumerate(images):
        write_pgm(mesh_dir / f"view_{i:03d}.pgm", img)
    return images


class TestPgmReader:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((8, 12))
        write_pgm(tmp_path / "x.pgm", img)
        back = read_pgm(tmp_path / "x.pgm")
        assert back.shape == (8, 12)
        assert np.abs(back - img).max() < 1.0 / 255.0

    def test_comment_handling(self, tmp_path):
        data = b"P5\n# a comment\n2 2\n255\n" + bytes([0, 64, 128, 255])
        (tmp_path / "c.pgm").write_bytes(data)
        img = read_pgm(tmp_path / "c.pgm")
        assert img.shape == (2, 2)
        assert img[1, 1] == 1.0


def pick_separable_prompts(tmp_path, images_a, images_b):
    """Choose two prompts such that each mesh's renders are closest to its
    own prompt under the encoder, so correct labeling scores 1.0."""
    encoder = build_encoder("toy", 32, 16, 16)
    with torch.no_grad():
        emb_a, _ = encoder(torch.from_numpy(images_a.astype(np.float32)))
        emb_b, _ = encoder(torch.from_numpy(images_b.astype(np.float32)))
    mean_a = emb_a.mean(0)
    mean_a = mean_a / mean_a.norm()
    mean_b = emb_b.mean(0)
    mean_b = mean_b / mean_b.norm()
    candidates = ["giraffe", "elephant", "hippo", "camel", "zebra", "lion",
                  "turtle", "crocodile", "snail", "ladybug"]
    for pa in candidates:
        for pb in candidates:
            if pa == pb:
                continue
            ta = encoder.embed_text(pa)
            tb = encoder.embed_text(pb)
            if float(mean_a @ ta) > float(mean_b @ ta) and float(mean_b @ tb) > float(mean_a @ tb):
                return pa, pb
    pytest.fail("no separable prompt pair among candidates")


class TestRPrecision:
    def test_single_mesh_single_prompt_is_one(self, tmp_path):
        make_renders(tmp_path, "only", seed=1)
        prompts = tmp_path / "prompts.tsv"
        prompts.write_text("only\tgiraffe\n")
        result = eval_rprecision(tmp_path / "renders", prompts)
        assert result["precision"] == 1.0
        assert result["prompts"] == 1

    def test_swapped_labels_score_zero(self, tmp_path):
        images_a = make_renders(tmp_path, "mesh_a", seed=2)
        images_b = make_renders(tmp_path, "mesh_b", seed=3)
        prompt_a, prompt_b = pick_separable_prompts(tmp_path, images_a, images_b)

        correct = tmp_path / "correct.tsv"
        correct.write_text(f"mesh_a\t{prompt_a}\nmesh_b\t{prompt_b}\n")
        assert eval_rprecision(tmp_path / "renders", correct)["precision"] == 1.0

        swapped = tmp_path / "swapped.tsv"
        swapped.write_text(f"mesh_a\t{prompt_b}\nmesh_b\t{prompt_a}\n")
        assert eval_rprecision(tmp_path / "renders", swapped)["precision"] == 0.0

    def test_missing_renders_error(self, tmp_path):
        (tmp_path / "renders").mkdir()
        prompts = tmp_path / "prompts.tsv"
        prompts.write_text("ghost\tgiraffe\n")
        with pytest.raises(FileNotFoundError):
            eval_rprecision(tmp_path / "renders", prompts)

    def test_bad_prompt_line_rejected(self, tmp_path):
        prompts = tmp_path / "prompts.tsv"
        prompts.write_text("no-tab-here\n")
        with pytest.raises(ValueError):
            eval_rprecision(tmp_path, prompts)
