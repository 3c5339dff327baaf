import json
import struct

import numpy as np
import pytest

from oucopula import FormatError
from oucopula.data import GeneratorConfig, generate
from oucopula.dataio import read_container, read_manifest, read_netpbm, write_container


def small_dataset(n=10, channels=1, res=8, seed=3):
    return generate(GeneratorConfig(n_patients=n, resolution=res,
                                    channels=channels, seed=seed))


def test_roundtrip_is_exact(tmp_path):
    data = small_dataset(channels=3)
    path = tmp_path / "d.oud"
    write_container(data, path)
    back = read_container(path)
    assert len(back) == len(data)
    assert back.provenance == data.provenance
    for a, b in zip(data.records, back.records):
        assert np.array_equal(a.os_image, b.os_image)
        assert a.os_image.dtype == b.os_image.dtype == np.float32
        assert np.array_equal(a.od_image, b.od_image)
        assert np.array_equal(a.labels, b.labels)
        assert b.labels.dtype == np.float64


def test_writes_are_byte_identical(tmp_path):
    data = small_dataset()
    a, b = tmp_path / "a.oud", tmp_path / "b.oud"
    write_container(data, a)
    write_container(data, b)
    assert a.read_bytes() == b.read_bytes()


def test_file_size_arithmetic(tmp_path):
    data = small_dataset(n=10, channels=2, res=8)
    path = tmp_path / "d.oud"
    write_container(data, path)
    meta = json.dumps(data.provenance, sort_keys=True).encode("utf-8")
    record = 2 * 2 * 8 * 8 * 4 + 32
    assert path.stat().st_size == 24 + 10 * record + 4 + len(meta)


def test_bad_magic_names_expected(tmp_path):
    path = tmp_path / "x.oud"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(FormatError, match="OUD1"):
        read_container(path)


def test_bad_version_rejected(tmp_path):
    data = small_dataset()
    path = tmp_path / "v.oud"
    write_container(data, path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version 9"):
        read_container(path)


def test_truncation_reports_byte_offset(tmp_path):
    data = small_dataset()
    path = tmp_path / "t.oud"
    write_container(data, path)
    raw = path.read_bytes()
    cut = len(raw) // 3
    path.write_bytes(raw[:cut])
    with pytest.raises(FormatError, match=rf"byte {cut}"):
        read_container(path)


def test_trailing_bytes_rejected(tmp_path):
    data = small_dataset()
    path = tmp_path / "g.oud"
    write_container(data, path)
    path.write_bytes(path.read_bytes() + b"zz")
    with pytest.raises(FormatError, match="trailing"):
        read_container(path)


def test_zero_record_file_rejected(tmp_path):
    path = tmp_path / "z.oud"
    meta = b"{}"
    path.write_bytes(b"OUD1" + struct.pack("<5I", 1, 0, 1, 4, 4)
                     + struct.pack("<I", len(meta)) + meta)
    with pytest.raises(FormatError, match="zero records"):
        read_container(path)


def test_nonfinite_labels_rejected_on_read(tmp_path):
    data = small_dataset(n=10, channels=1, res=8)
    path = tmp_path / "n.oud"
    write_container(data, path)
    raw = bytearray(path.read_bytes())
    img = 1 * 8 * 8 * 4
    at = 24 + 2 * img  # first record's labels
    raw[at:at + 8] = struct.pack("<d", np.inf)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="record 0"):
        read_container(path)


# --------------------------------------------------------------------- netpbm


def write_pgm(path, array2d, maxval=255, comment=False):
    h, w = array2d.shape
    header = b"P5\n"
    if comment:
        header += b"# a comment line\n"
    header += f"{w} {h}\n{maxval}\n".encode()
    dtype = ">u2" if maxval > 255 else np.uint8
    path.write_bytes(header + array2d.astype(dtype).tobytes())


def write_ppm(path, array3d_hwc, maxval=255):
    h, w, _ = array3d_hwc.shape
    header = f"P6\n{w} {h}\n{maxval}\n".encode()
    path.write_bytes(header + array3d_hwc.astype(np.uint8).tobytes())


def test_pgm_decoding_scales_by_maxval(tmp_path):
    arr = np.array([[0, 128], [255, 64]], dtype=np.uint16)
    p = tmp_path / "a.pgm"
    write_pgm(p, arr, maxval=255, comment=True)
    img = read_netpbm(p)
    assert img.shape == (1, 2, 2)
    assert img.dtype == np.float32
    assert np.allclose(img[0], arr / 255.0, atol=1e-7)


def test_sixteen_bit_pgm(tmp_path):
    arr = np.array([[0, 40000], [65535, 1]], dtype=np.uint32)
    p = tmp_path / "b.pgm"
    write_pgm(p, arr, maxval=65535)
    img = read_netpbm(p)
    assert np.allclose(img[0], arr / 65535.0, atol=1e-7)


def test_ppm_channel_order(tmp_path):
    arr = np.zeros((2, 2, 3), dtype=np.uint8)
    arr[..., 0] = 10
    arr[..., 1] = 20
    arr[..., 2] = 30
    p = tmp_path / "c.ppm"
    write_ppm(p, arr)
    img = read_netpbm(p)
    assert img.shape == (3, 2, 2)
    assert np.allclose(img[0], 10 / 255)
    assert np.allclose(img[1], 20 / 255)
    assert np.allclose(img[2], 30 / 255)


def test_netpbm_errors(tmp_path):
    p = tmp_path / "bad.pbm"
    p.write_bytes(b"P4\n2 2\n\x00")
    with pytest.raises(FormatError, match="P5 or P6"):
        read_netpbm(p)
    q = tmp_path / "trunc.pgm"
    q.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(FormatError, match="truncated"):
        read_netpbm(q)
    r = tmp_path / "maxval.pgm"
    r.write_bytes(b"P5\n1 1\n0\n\x00")
    with pytest.raises(FormatError, match="maxval"):
        read_netpbm(r)


# ------------------------------------------------------------------- manifest


def make_manifest(tmp_path, rows, header="id,os_path,od_path,os_se,os_al,od_se,od_al"):
    lines = [header] + rows
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_manifest_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    for pid in ("p1", "p2"):
        for eye in ("os", "od"):
            write_pgm(tmp_path / f"{pid}_{eye}.pgm",
                      rng.integers(0, 256, size=(4, 4)).astype(np.uint16))
    path = make_manifest(tmp_path, [
        "p1,p1_os.pgm,p1_od.pgm,0.5,23.1,0.4,23.0",
        "p2,p2_os.pgm,p2_od.pgm,-1.25,24.0,-1.5,24.2",
    ])
    data = read_manifest(path)
    assert len(data) == 2
    assert data.provenance["kind"] == "external"
    assert data.provenance["ids"] == ["p1", "p2"]
    assert data.image_shape == (1, 4, 4)
    assert np.allclose(data.records[0].labels, [0.5, 23.1, 0.4, 23.0])


def test_manifest_errors(tmp_path):
    with pytest.raises(FormatError, match="header"):
        read_manifest(make_manifest(tmp_path, [], header="id,os,od"))
    write_pgm(tmp_path / "x.pgm", np.zeros((2, 2), dtype=np.uint16))
    with pytest.raises(FormatError, match="not found"):
        read_manifest(make_manifest(tmp_path, ["p1,x.pgm,missing.pgm,1,2,3,4"]))
    with pytest.raises(FormatError, match="label"):
        read_manifest(make_manifest(tmp_path, ["p1,x.pgm,x.pgm,one,2,3,4"]))
    with pytest.raises(FormatError, match="fields"):
        read_manifest(make_manifest(tmp_path, ["p1,x.pgm,x.pgm,1,2,3"]))
    with pytest.raises(FormatError, match="no rows"):
        read_manifest(make_manifest(tmp_path, []))
