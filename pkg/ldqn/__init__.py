# L-DQN: asynchronous limited-memory distributed quasi-Newton solver
__version__ = "1.0.0"
