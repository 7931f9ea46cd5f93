"""Simulation services: modem, channel, ADC, bounds, estimation, downlink and harness."""
