"""Mixed-autonomy ring-road laboratory: simulation, DQN lane-change agents, game benchmark, metrics."""

__version__ = "0.1.0"
