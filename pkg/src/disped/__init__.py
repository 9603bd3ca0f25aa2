"""Distributed economic dispatch over weight-balanced digraphs: dynamics, oracle and simulator."""

__version__ = "0.1.0"
