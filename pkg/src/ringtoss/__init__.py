"""Trajectory synthesis for goal-conditioned ring tossing in simulation.

Pipeline: sample feasible release states on the ballistic goal manifold, plan
joint-space throws with a kinodynamic planner, compress them into a compact
variable-length parameterization, learn a latent motion manifold with an
autoencoder, and train a conditional flow-matching model on executed landings
so sampled trajectories compensate for the configured dynamics gap.
"""

__version__ = "0.1.0"
