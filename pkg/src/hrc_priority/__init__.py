"""Motion-priority design for manufacturing/recovery robots sharing a cell.

The package is organised bottom-up:

- :mod:`hrc_priority.kinematics` -- serial-chain FK and geometric Jacobians
- :mod:`hrc_priority.qp` -- operator-splitting QP solver
- :mod:`hrc_priority.priority_ik` -- weighted multi-robot differential IK
- :mod:`hrc_priority.motion_control` -- impedance controllers and schedules
- :mod:`hrc_priority.prior_sampler` -- Gaussian-mixture drop prior + MCMC
- :mod:`hrc_priority.simulator` -- kinematic HRC trial simulator
- :mod:`hrc_priority.gp` -- Gaussian-process surrogates
- :mod:`hrc_priority.ga` -- real-coded GA for the threshold search
- :mod:`hrc_priority.pipeline` / :mod:`hrc_priority.cli` -- orchestration
"""

__version__ = "0.1.0"
