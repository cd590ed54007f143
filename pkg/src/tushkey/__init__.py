"""Multi-device enrollment for passwordless authentication.

A relay distributes an RP-issued access token between a user's devices
inside envelopes sealed under pairwise Diffie-Hellman keys; each receiving
device redeems the token and enrolls with a credential keypair it generates
locally. No credential private key ever leaves the device that made it.
"""

__version__ = "0.1.0"
