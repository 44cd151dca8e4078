#!/usr/bin/env python3
"""Generate the MP4 fixtures used by the container parser tests.

Each fixture is muxed by FFmpeg (through PyAV) and decoded back with the same
library to produce a reference dump: frame count, presentation-ordered PTS and
the presentation indices of key frames. The C++ tests compare the parser
against these dumps.

    pip install av numpy
    python3 scripts/make_fixtures.py tests/fixtures
"""
import json
import sys
from fractions import Fraction
from pathlib import Path

import av
import numpy as np


def frames(n, width, height):
    rng = np.random.default_rng(1234)
    base = rng.integers(0, 255, size=(height, width, 3), dtype=np.uint8)
    for i in range(n):
        img = np.roll(base, shift=i * 3, axis=1)
        img[: height // 4, : width // 4] = (i * 17) % 255
        yield av.VideoFrame.from_ndarray(img, format="rgb24")


def mux(path, codec, n, options=None, width=64, height=48, fps=30,
        container_options=None, audio_first=False, pix_fmt="yuv420p"):
    out = av.open(str(path), mode="w", format="mp4",
                  options=container_options or {})
    audio = None
    if audio_first:
        audio = out.add_stream("aac", rate=48000)
    vs = out.add_stream(codec, rate=fps, options=options or {})
    vs.width, vs.height, vs.pix_fmt = width, height, pix_fmt
    vs.time_base = Fraction(1, fps * 512)
    for frame in frames(n, width, height):
        for pkt in vs.encode(frame.reformat(format=pix_fmt)):
            out.mux(pkt)
    for pkt in vs.encode():
        out.mux(pkt)
    if audio is not None:
        silence = av.AudioFrame.from_ndarray(
            np.zeros((1, 1024), dtype=np.float32), format="fltp", layout="mono")
        silence.sample_rate = 48000
        for k in range(4):
            silence.pts = k * 1024
            for pkt in audio.encode(silence):
                out.mux(pkt)
        for pkt in audio.encode():
            out.mux(pkt)
    out.close()


def dump(path):
    with av.open(str(path)) as inp:
        vs = inp.streams.video[0]
        pts, keys = [], []
        for pkt in inp.demux(vs):
            if pkt.size == 0:
                continue
            pts.append(pkt.pts)
            keys.append(bool(pkt.is_keyframe))
        order = sorted(range(len(pts)), key=lambda i: pts[i])
        sorted_pts = [pts[i] for i in order]
        key_idx = [rank for rank, i in enumerate(order) if keys[i]]
        decoded = sum(1 for _ in inp.decode(video=0)) if False else None
    with av.open(str(path)) as inp:
        decoded = sum(1 for _ in inp.decode(video=0))
        codec = inp.streams.video[0].codec_context.name
        w = inp.streams.video[0].codec_context.width
        h = inp.streams.video[0].codec_context.height
        ts = inp.streams.video[0].time_base
    return {
        "frame_count": len(sorted_pts),
        "decoded_frames": decoded,
        "pts": sorted_pts,
        "keyframe_indices": key_idx,
        "timescale": ts.denominator // ts.numerator if ts.numerator == 1 else None,
        "codec": codec,
        "width": w,
        "height": h,
    }


def main(outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    x264 = lambda extra: {"preset": "ultrafast", "tune": "zerolatency", **extra}
    specs = {
        # one GOP of ten frames, so stss = {1}
        "h264_single_gop": dict(codec="libx264", n=10, options=x264(
            {"x264-params": "keyint=10:min-keyint=10:scenecut=0"})),
        # every frame is a sync sample; the muxer omits stss
        "h264_all_intra": dict(codec="libx264", n=10, options=x264(
            {"x264-params": "keyint=1:scenecut=0"})),
        # B-frames force a ctts box and reordering
        "h264_bframes": dict(codec="libx264", n=60, options={
            "preset": "medium",
            "x264-params": "keyint=12:min-keyint=12:scenecut=0:bframes=2:b-adapt=0:open-gop=0"}),
        "h265_gops": dict(codec="libx265", n=40, options={
            "preset": "ultrafast",
            "x265-params": "keyint=8:min-keyint=8:scenecut=0:bframes=0:log-level=error"}),
        "vp9_gops": dict(codec="libvpx-vp9", n=30, options={
            "g": "10", "deadline": "realtime", "cpu-used": "8"}),
        # audio track precedes the video track
        "audio_then_video": dict(codec="libx264", n=24, audio_first=True,
                                 options=x264({"x264-params": "keyint=6:scenecut=0"})),
        # fragmented layout must be rejected
        "fragmented": dict(codec="libx264", n=20, options=x264(
            {"x264-params": "keyint=5:scenecut=0"}),
            container_options={"movflags": "frag_keyframe+empty_moov"}),
    }
    manifest = {}
    for name, kw in specs.items():
        path = outdir / f"{name}.mp4"
        mux(path, **kw)
        if name != "fragmented":
            manifest[name] = dump(path)
        print(name, path.stat().st_size, "bytes")
    (outdir / "reference_dump.json").write_text(json.dumps(manifest, indent=1) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures")
