# Distribution checks in unit tests run at a stricter level than the acceptance
# suite: a module holds many of them and each should rarely raise a false alarm.
UNIT_LEVEL = 1e-3
