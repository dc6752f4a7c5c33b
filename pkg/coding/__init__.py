"""Binary arithmetic coder and the bit-plane integer symbol codec."""
