"""Frozen reference values; see derive_oracle_values.py for how they were made.

Keys are contamination levels; values are (eta_plus, d eta_plus / d eps) for
the Huber score (delta = 1.345) under the standard normal.
"""

HUBER_NORMAL_MAXBIAS = {
    0.01: (0.032753067821599386, 3.2759262212368832),
    0.05: (0.16413897591890429, 3.2984304783014405),
    0.1: (0.33066545730872289, 3.3714065950422215),
    0.2: (0.68220941978214904, 3.7106152869968859),
    0.3: (1.0881402729389734, 4.5295939311642366),
    0.45: (2.0800940968614199, 11.653405975702763),
}

HUBER_NORMAL_EFFICIENCY = 0.95000025970286725
