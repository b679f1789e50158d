import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridcrop.data.annotations import (
    AnnotatedImage,
    AnnotationError,
    format_annotations,
    parse_annotations,
    read_annotations,
    write_annotations,
)
from gridcrop.data.ppm import PPMError, RawImage, read_ppm, write_ppm
from gridcrop.data.synth import (
    SynthSceneSpec,
    flip_scene,
    generate_dataset,
    oracle_mos,
    random_scene_spec,
    render,
    synth_generate,
)
from gridcrop.data.transforms import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    AugmentConfig,
    augment,
    flip_crop,
    hflip,
    preprocess,
    resized_dims,
)
from gridcrop.geometry import CropRect, ImageDims, enumerate_candidates, scale_crop

# --- PPM ----------------------------------------------------------------------


def test_ppm_single_white_pixel():
    img = read_ppm(b"P6\n1 1\n255\n\xff\xff\xff")
    assert img.dims == ImageDims(1, 1)
    assert tuple(img.pixels[0, 0]) == (255, 255, 255)


def test_ppm_canonical_round_trip():
    payload = bytes(range(12))
    blob = b"P6\n2 2\n255\n" + payload
    img = read_ppm(blob)
    assert write_ppm(img) == blob
    assert tuple(img.pixels[0, 1]) == (3, 4, 5)
    assert tuple(img.pixels[1, 0]) == (6, 7, 8)


def test_ppm_non_square_orientation():
    pixels = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    blob = write_ppm(RawImage(pixels))
    assert blob.startswith(b"P6\n3 2\n255\n")
    assert np.array_equal(read_ppm(blob).pixels, pixels)


def test_ppm_comments_and_whitespace():
    payload = bytes(range(12))
    plain = read_ppm(b"P6\n2 2\n255\n" + payload)
    messy = read_ppm(b"P6 # made by hand\n# another comment\n  2\t\n2 #inline\n255\n" + payload)
    assert messy == plain


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_ppm_random_round_trip(H, W, seed):
    pixels = np.random.default_rng(seed).integers(0, 256, size=(H, W, 3), dtype=np.uint8)
    blob = write_ppm(RawImage(pixels))
    assert write_ppm(read_ppm(blob)) == blob


@pytest.mark.parametrize("blob", [
    b"P3\n1 1\n255\n\xff\xff\xff",         # wrong magic
    b"P6\n2 2\n255\n\x00\x00\x00",         # truncated payload
    b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00",  # 16-bit maxval
    b"P6\n1 1\n",                           # header ends early
    b"P6\n0 1\n255\n",                      # zero width
    b"P6\nx 1\n255\n\x00\x00\x00",         # garbage in header
])
def test_ppm_errors(blob):
    with pytest.raises(PPMError):
        read_ppm(blob)


# --- preprocess ---------------------------------------------------------------


def test_preprocess_downscale_and_crop_mapping():
    img = RawImage(np.zeros((512, 512, 3), dtype=np.uint8))
    x = preprocess(img)
    assert x.shape == (1, 3, 256, 256)
    assert scale_crop(CropRect(0, 0, 512, 512), img.dims, ImageDims(256, 256)) == CropRect(0, 0, 256, 256)


def test_preprocess_keeps_short_side_256():
    rng = np.random.default_rng(0)
    img = RawImage(rng.integers(0, 256, size=(256, 400, 3), dtype=np.uint8))
    x = preprocess(img, dtype=np.float64)
    assert x.shape == (1, 3, 256, 400)
    expected = (img.pixels / 255.0 - np.asarray(IMAGENET_MEAN)) / np.asarray(IMAGENET_STD)
    np.testing.assert_allclose(x.data[0].transpose(1, 2, 0), expected, atol=1e-12)


def test_preprocess_portrait_and_landscape():
    assert resized_dims(ImageDims(600, 300)) == ImageDims(512, 256)
    assert resized_dims(ImageDims(300, 450)) == ImageDims(256, 384)


@pytest.mark.parametrize("value", [0, 128, 255])
def test_preprocess_constant_gray(value):
    img = RawImage(np.full((300, 333, 3), value, dtype=np.uint8))
    x = preprocess(img, dtype=np.float64).data[0]
    for c in range(3):
        np.testing.assert_allclose(x[c], (value / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c], atol=1e-12)


def test_preprocess_rejects_one_pixel_side():
    with pytest.raises(ValueError):
        preprocess(RawImage(np.zeros((1, 50, 3), dtype=np.uint8)))


@settings(max_examples=100, deadline=None)
@given(st.integers(20, 1500), st.integers(20, 1500), st.data())
def test_rescaled_crops_keep_area_fraction(H, W, data):
    src = ImageDims(H, W)
    x1 = data.draw(st.integers(0, H - 1))
    y1 = data.draw(st.integers(0, W - 1))
    crop = CropRect(x1, y1, data.draw(st.integers(x1 + 1, H)), data.draw(st.integers(y1 + 1, W)))
    dst = resized_dims(src)
    out = scale_crop(crop, src, dst)
    assert out.is_valid(dst)
    sh, sw = dst.H / H, dst.W / W
    # each edge lands within one destination pixel of its exact position
    assert abs(out.x1 - crop.x1 * sh) <= 1 and abs(out.x2 - crop.x2 * sh) <= 1
    assert abs(out.y1 - crop.y1 * sw) <= 1 and abs(out.y2 - crop.y2 * sw) <= 1


# --- augmentation -------------------------------------------------------------


def _sample_pairs(dims, rng, n=20):
    cands = enumerate_candidates(dims)
    idx = rng.choice(len(cands), size=min(n, len(cands)), replace=False)
    return [(cands[i], float(rng.uniform(1, 5))) for i in idx]


def test_flip_twice_is_identity():
    rng = np.random.default_rng(1)
    img = RawImage(rng.integers(0, 256, size=(40, 64, 3), dtype=np.uint8))
    pairs = _sample_pairs(img.dims, rng)
    once = hflip(img, pairs)
    twice = hflip(*once)
    assert twice[0] == img and twice[1] == pairs
    assert once[0] != img


def test_flip_crop_formula():
    assert flip_crop(CropRect(1, 2, 5, 10), 12) == CropRect(1, 2, 5, 10)
    assert flip_crop(CropRect(0, 0, 4, 3), 12) == CropRect(0, 9, 4, 12)


def test_flip_moves_pixels_with_crop():
    rng = np.random.default_rng(2)
    img = RawImage(rng.integers(0, 256, size=(30, 50, 3), dtype=np.uint8))
    c = CropRect(3, 7, 20, 31)
    fimg, [(fc, _)] = hflip(img, [(c, 3.0)])
    original = img.pixels[c.x1:c.x2, c.y1:c.y2]
    mirrored = fimg.pixels[fc.x1:fc.x2, fc.y1:fc.y2][:, ::-1]
    assert np.array_equal(original, mirrored)


def test_identity_jitter_is_identity():
    rng = np.random.default_rng(3)
    img = RawImage(rng.integers(0, 256, size=(32, 48, 3), dtype=np.uint8))
    pairs = _sample_pairs(img.dims, rng)
    out, out_pairs = augment(img, pairs, rng, AugmentConfig.identity())
    assert out == img and out_pairs == pairs


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(24, 80), st.integers(24, 80))
def test_augment_preserves_labels(seed, H, W):
    rng = np.random.default_rng(seed)
    img = RawImage(rng.integers(0, 256, size=(H, W, 3), dtype=np.uint8))
    pairs = _sample_pairs(img.dims, rng)
    out, out_pairs = augment(img, pairs, rng)
    assert out.dims == img.dims
    assert len(out_pairs) == len(pairs)
    assert [m for _, m in out_pairs] == [m for _, m in pairs]
    for (c, _), (oc, _) in zip(pairs, out_pairs):
        assert oc.is_valid(img.dims)
        assert oc in (c, flip_crop(c, W))


def test_augment_is_seeded():
    img = RawImage(np.random.default_rng(4).integers(0, 256, size=(32, 32, 3), dtype=np.uint8))
    pairs = _sample_pairs(img.dims, np.random.default_rng(5))
    a = augment(img, pairs, np.random.default_rng(9))
    b = augment(img, pairs, np.random.default_rng(9))
    assert a[0] == b[0] and a[1] == b[1]


# --- synthetic scenes ---------------------------------------------------------


def test_synth_is_deterministic():
    spec = random_scene_spec(123)
    assert spec == random_scene_spec(123)
    a_img, a_ann = synth_generate(spec)
    b_img, b_ann = synth_generate(random_scene_spec(123))
    assert write_ppm(a_img) == write_ppm(b_img)
    assert a_ann == b_ann
    assert random_scene_spec(124) != spec


def test_synth_scene_layout():
    for seed in range(30):
        spec = random_scene_spec(seed)
        assert min(spec.dims) == 256 and 256 <= max(spec.dims) <= 384
        assert spec.subject.is_valid(spec.dims)
        img, ann = synth_generate(spec)
        assert img.dims == spec.dims
        assert 1 <= len(ann.crops) <= 90
        assert all(1.0 <= s <= 5.0 for s in ann.scores)


def _thirds_aligned_scene():
    """A scene with a candidate whose upper-left thirds point is a half-pixel subject center."""
    dims = ImageDims(240, 240)
    for c in enumerate_candidates(dims):
        ty = c.x1 + c.height / 3
        tx = c.y1 + c.width / 3
        if (2 * ty).is_integer() and (2 * tx).is_integer():
            half = 10
            subject = CropRect(int(ty - half), int(tx - half), int(ty - half) + 2 * half + int(2 * ty) % 2,
                               int(tx - half) + 2 * half + int(2 * tx) % 2)
            assert (subject.x1 + subject.x2) / 2 == ty and (subject.y1 + subject.y2) / 2 == tx
            return SynthSceneSpec(7, dims, subject, (230, 40, 40)), c
    raise AssertionError("no aligned candidate")


def test_synth_best_crop_is_maximal():
    spec, best = _thirds_aligned_scene()
    assert oracle_mos(spec, best) == pytest.approx(5.0, abs=1e-12)
    _, ann = synth_generate(spec)
    assert max(ann.scores) == 5.0
    assert ann.scores[ann.crops.index(best)] == 5.0


def test_synth_crop_without_subject_scores_low():
    spec = random_scene_spec(5)
    s = spec.subject
    H, W = spec.dims
    outside = [c for c in (CropRect(0, 0, s.x1, W), CropRect(s.x2, 0, H, W),
                           CropRect(0, 0, H, s.y1), CropRect(0, s.y2, H, W)) if c.is_valid(spec.dims)]
    assert outside
    for c in outside:
        assert oracle_mos(spec, c) <= 2.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_synth_oracle_flip_invariant(seed):
    spec = random_scene_spec(seed)
    flipped = flip_scene(spec)
    W = spec.dims.W
    for c in enumerate_candidates(spec.dims)[::7]:
        assert oracle_mos(flipped, flip_crop(c, W)) == pytest.approx(oracle_mos(spec, c), abs=1e-12)
    # the rendered discs are mirrored too
    img = render(spec)
    fimg = render(flipped)
    for d, fd in zip(spec.distractors, flipped.distractors):
        assert np.array_equal(img.pixels[d.cy, d.cx], fimg.pixels[fd.cy, fd.cx])


def test_generate_dataset_deterministic_and_varied():
    a = generate_dataset(4, seed=11)
    b = generate_dataset(4, seed=11)
    assert [x[1] for x in a] == [x[1] for x in b]
    assert all(x[0] == y[0] for x, y in zip(a, b))
    assert [x[1].path for x in a] == [f"img_{i:05d}.ppm" for i in range(4)]
    for _, ann in a:
        assert max(ann.scores) - min(ann.scores) >= 0.05


# --- annotation files ---------------------------------------------------------


def test_annotations_empty_round_trip():
    text = format_annotations([])
    assert text == "GAIC-ANN v1\n"
    assert parse_annotations(text) == []


def test_annotations_ninety_crops_round_trip(tmp_path):
    dims = ImageDims(240, 240)
    crops = enumerate_candidates(dims)
    assert len(crops) == 90
    rng = np.random.default_rng(6)
    scores = [round(float(v), 4) for v in rng.uniform(1, 5, size=90)]
    item = AnnotatedImage("photos/a.ppm", dims, crops, scores)
    path = tmp_path / "ann.txt"
    write_annotations(path, [item])
    back = read_annotations(path)
    assert back == [item]
    assert path.read_text() == format_annotations(back)


def test_annotations_score_format():
    item = AnnotatedImage("a.ppm", ImageDims(10, 10), [CropRect(0, 0, 10, 10)], [3.14159])
    assert format_annotations([item]).splitlines()[2] == "0 0 10 10 3.1416"


def test_annotations_crop_outside_dims_names_path_and_line():
    text = "GAIC-ANN v1\nIMG good.ppm 10 10 1\n0 0 10 10 3.0\nIMG bad.ppm 20 30 2\n0 0 20 30 2.0\n0 0 21 30 2.0\n"
    with pytest.raises(AnnotationError, match=r"ann.txt:6: image bad.ppm"):
        parse_annotations(text, source="ann.txt")


@pytest.mark.parametrize("text,fragment", [
    ("GAIC-ANN v2\n", "version"),
    ("", "version"),
    ("GAIC-ANN v1\nIMG a.ppm 10 10 1\n0 0 10 10 5.5\n", "outside"),
    ("GAIC-ANN v1\nIMG a.ppm 10 10 1\n0 0 10 10 0.5\n", "outside"),
    ("GAIC-ANN v1\nIMG a.ppm 10 10 2\n0 0 10 10 3.0\n", "file ended"),
    ("GAIC-ANN v1\nIMG a.ppm 10 10 1\n5 0 5 10 3.0\n", "invalid"),
    ("GAIC-ANN v1\nIMG a.ppm ten 10 1\n", "non-integer"),
    ("GAIC-ANN v1\nPRED a.ppm 10 10 0\n", "expected"),
    ("GAIC-ANN v1\nIMG a.ppm 10 10 1\n0 0 10 x 3.0\n", "malformed"),
])
def test_annotation_errors(text, fragment):
    with pytest.raises(AnnotationError, match=fragment):
        parse_annotations(text)


def test_prediction_records():
    item = AnnotatedImage("a.ppm", ImageDims(10, 10), [CropRect(0, 0, 10, 10), CropRect(1, 1, 9, 9)], [-0.25, 7.5])
    text = format_annotations([item], kind="PRED")
    assert text.splitlines()[1] == "PRED a.ppm 10 10 2"
    assert parse_annotations(text, kind="PRED") == [item]
    with pytest.raises(AnnotationError):
        parse_annotations(text, kind="IMG")
