"""Decoupling test scenarios."""
