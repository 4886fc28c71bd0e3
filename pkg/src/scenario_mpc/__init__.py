"""Scenario-based stochastic MPC for linear systems with uncertain dynamics."""
