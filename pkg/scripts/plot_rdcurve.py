"""Plot PSNR and MS-SSIM against bpp from one or more ``ntc rdcurve`` JSON files.

usage: python3 scripts/plot_rdcurve.py rd.json [more.json ...] -o rd.png

Needs matplotlib, which is not a package dependency.
"""

import argparse
import json
from pathlib import Path


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("curves", nargs="+", type=Path)
    p.add_argument("-o", "--output", type=Path, default=Path("rdcurve.png"))
    args = p.parse_args(argv)
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise SystemExit("matplotlib is required: pip install matplotlib")

    fig, (ax_psnr, ax_ssim) = plt.subplots(1, 2, figsize=(10, 4))
    for path in args.curves:
        points = sorted(json.loads(path.read_text())["points"], key=lambda q: q["bpp"])
        bpp = [q["bpp"] for q in points]
        ax_psnr.plot(bpp, [q["psnr"] for q in points], "o-", label=path.stem)
        ssim = [(b, q["ms_ssim"]) for b, q in zip(bpp, points) if q["ms_ssim"] is not None]
        if ssim:
            ax_ssim.plot(*zip(*ssim), "o-", label=path.stem)
    ax_psnr.set(xlabel="bits per pixel", ylabel="PSNR (dB)")
    ax_ssim.set(xlabel="bits per pixel", ylabel="MS-SSIM")
    for ax in (ax_psnr, ax_ssim):
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(args.output)


if __name__ == "__main__":
    main()
