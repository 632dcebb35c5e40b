"""Smoke test for the `lauerl` Python module.

Usage: python python/smoke_test.py [path/to/liblauerl_py.so]

Without an argument the library is looked up in target/{release,debug}.
When the module is installed (maturin), the import is used as is.
"""

import importlib
import shutil
import struct
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_lauerl(tmp):
    try:
        return importlib.import_module("lauerl")
    except ImportError:
        pass
    if len(sys.argv) > 1:
        candidates = [Path(sys.argv[1])]
    else:
        candidates = [ROOT / "target" / p / "liblauerl_py.so" for p in ("release", "debug")]
    lib = next((c for c in candidates if c.exists()), None)
    if lib is None:
        sys.exit("build the extension first: cargo build -p lauerl-py")
    shutil.copy(lib, Path(tmp) / "lauerl.so")
    sys.path.insert(0, tmp)
    return importlib.import_module("lauerl")


def write_pgm16(path, width, height, pixels):
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n65535\n".encode())
        f.write(struct.pack(f">{len(pixels)}H", *pixels))


def disc_frame(size, centers, radius):
    pixels = [0] * (size * size)
    for cx, cy in centers:
        for y in range(cy - radius, cy + radius + 1):
            for x in range(cx - radius, cx + radius + 1):
                if (x - cx) ** 2 + (y - cy) ** 2 <= radius ** 2:
                    pixels[y * size + x] = 65535
    return pixels


def main():
    with tempfile.TemporaryDirectory() as tmp:
        lauerl = import_lauerl(tmp)

        assert lauerl.reflection_allowed(221, 1, 0, 0)
        assert not lauerl.reflection_allowed(225, 1, 0, 0)
        assert lauerl.reflection_allowed(225, 1, 1, 1)
        assert not lauerl.reflection_allowed(229, 1, 1, 1)
        try:
            lauerl.reflection_allowed(1, 1, 0, 0)
            raise AssertionError("space group 1 accepted")
        except ValueError:
            pass

        identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        spots = lauerl.simulate_spots(221, identity)
        assert spots, "no spots for an aligned cubic crystal"
        assert all(0 <= x < 1284 and 0 <= y < 1284 for x, y, _, _ in spots)

        env = lauerl.Env("cubic", seed=3)
        obs, info = env.reset()
        assert len(obs) == lauerl.OBS_SIZE and len(obs[0]) == lauerl.OBS_SIZE
        assert all(0.0 <= v <= 1.0 for row in obs for v in row)
        d0 = info["distance_deg"]
        assert abs(env.distance_deg() - d0) < 1e-9
        done, steps, total = False, 0, 0.0
        while not done:
            obs, reward, terminated, truncated, info = env.step(env.oracle_action())
            total += reward
            steps += 1
            done = terminated or truncated
        assert terminated and info["distance_deg"] <= 5.0, info
        print(f"oracle episode: {d0:.2f} deg -> {info['distance_deg']:.2f} deg in {steps} steps, return {total:.1f}")

        frame = Path(tmp) / "frame.pgm"
        # full-size detector frame, spots drawn at the simulator's radius
        write_pgm16(frame, 1284, 1284, disc_frame(1284, [(300, 400), (900, 700)], 10))
        width, height, pixels = lauerl.read_frame(str(frame))
        assert (width, height, len(pixels)) == (1284, 1284, 1284 * 1284)
        found = sorted(lauerl.extract_spots(str(frame)))
        assert len(found) == 2, found
        assert abs(found[0][0] - 300.5) < 1.0 and abs(found[0][1] - 400.5) < 1.0, found
        obs = lauerl.frame_observation(str(frame))
        assert len(obs) == lauerl.OBS_SIZE and max(max(r) for r in obs) > 0.0
        try:
            lauerl.read_frame(str(Path(tmp) / "missing.pgm"))
            raise AssertionError("missing file accepted")
        except OSError:
            pass
    print("python smoke test passed")


if __name__ == "__main__":
    main()
