"""Domain services: cohort data, features, synthetic cohorts, learners and statistics."""
