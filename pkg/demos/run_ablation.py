"""
Ablation sweep through the harness
==================================

The four variants on dense ChainReach with two seeds each, written to
``runs/`` (or ``$ACE_OUT_DIR``), aggregated and plotted. The same thing
from the shell::

    acelab run --config demos/configs/chainreach_ace.json --variant sac
    acelab aggregate --in runs/chainreach --out summary.csv
    acelab plot --summary runs/chainreach/summary.csv --out figures
"""

# %%
from acelab.harness import RunConfig, emit_plots, read_csv, run_experiment

base = RunConfig.from_json("demos/configs/chainreach_ace.json").to_dict()
for variant in ("sac", "causalsac", "sac-reset", "ace"):
    cfg = RunConfig.from_dict({**base, "name": f"chainreach-{variant}", "variant": variant})
    art = run_experiment(cfg)
    final = read_csv(art.summary)[-1]
    print(f"{variant:10s} final return {final['return_mean']:8.2f} +- {final['return_std']:.2f}")
    emit_plots(read_csv(art.summary), art.run_dir / "figures", read_csv(art.weights))
