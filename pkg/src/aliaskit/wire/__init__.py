"""Bit-exact codecs for the plaintext subsets of SSH and BGP used to
harvest host identifiers."""

from aliaskit.wire import bgp, ssh

__all__ = ["bgp", "ssh"]
