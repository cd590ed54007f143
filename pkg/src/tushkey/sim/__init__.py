"""In-process multi-device scenario harness.

Builds both servers and any number of device agents over an in-memory
dispatch or real loopback HTTP, records every wire exchange, injects
faults, times the protocol phases and runs the adversarial checks.
"""
