"""Quick end-to-end check of the Python bindings on a small problem."""

import math
import tempfile
from pathlib import Path

import tmis_py as t


def main():
    assert abs(t.bessel_j(0, 1.0) - 0.7651976865579666) < 1e-14
    assert abs(t.hankel1(1, 2.0).imag - t.bessel_y(1, 2.0)) < 1e-15

    w = t.layer_weights(0.8, 7)
    assert abs(w[0] - 0.262144) < 1e-15 and w[-1] == 1.0
    assert t.total_loss([3.0, 2.0, 1.0], c=0.0) == 1.0
    assert t.snr_weighted_loss(1.0, 0.2) == 1.0

    cfg = t.SceneConfig(n_tx=8, n_rx=16, forward_grid=24, inversion_grid=16)
    sim = t.Simulation(cfg, "austria", contrast=0.5, noise=0.05, seed=1)
    truth = sim.truth
    assert truth.nmse(truth) == 0.0
    assert abs(truth.ssim(truth) - 1.0) < 1e-12
    assert len(sim.scattered()) == 8 and len(sim.scattered()[0]) == 16

    bps = sim.bps()
    print(f"bps       nmse={bps.nmse(truth):.4f}")
    for name, trace in [("bim", sim.bim(iters=4)), ("vbim", sim.vbim(iters=4)), ("unrolled", sim.unrolled(layers=4))]:
        final = trace.final_contrast()
        print(f"{name:9} nmse={final.nmse(truth):.4f} residuals={[round(r, 4) for r in trace.residuals]}")
        assert all(math.isfinite(r) for r in trace.residuals)

    with tempfile.TemporaryDirectory() as d:
        run = Path(d) / "sim"
        run_id = t.simulate_run(run, cfg, "austria", contrast=0.5, noise=0.1, seed=3)
        out = t.invert_run(run, "vbim", iters=3)
        row = t.eval_run(run, out, csv=Path(d) / "metrics.csv")
        print(run_id, row)
        header = (Path(d) / "metrics.csv").read_text().splitlines()[0]
        assert header == "run_id,method,noise_level,nmse,ssim,iterations,wall_ms,es_residual"
    print("ok")


if __name__ == "__main__":
    main()
