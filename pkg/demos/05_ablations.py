"""
Update routing and ablations
============================

Which networks each objective updates depends only on the step parity,
whether warm-up is active, and the ablation flags. Printing the table is
the quickest way to see what an ablation changes.
"""

from nerfgan.config import TrainingConfig, ablation_config
from nerfgan.training import routing, warmup_active

cfg = TrainingConfig(total_iterations=100)
print("warm-up at steps 0, 49, 50:", [warmup_active(i, 100) for i in (0, 49, 50)])

# steps 10/11 fall inside warm-up, 60/61 after it
for tag in ("", "A", "B", "C", "D", "E", "F", "G"):
    tagged = ablation_config(tag, cfg) if tag else cfg
    print(f"\nablation {tag or 'none'}  recon weight {tagged.loss_weights.recon}")
    for it in (10, 11, 60, 61):
        active = [name for name, on in routing(it, tagged)._asdict().items() if on]
        print(f"  step {it}: {' '.join(active)}")
