"""Application layer of the fairdrop dropout-prediction fairness audit."""
