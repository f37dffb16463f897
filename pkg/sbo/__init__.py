"""
Stereotypicality-based obfuscation of implicit-feedback data, with a BPR-MF recommender and
an attribute-inference attacker to measure the accuracy-privacy trade-off

Licensed under the MIT License <https://opensource.org/licenses/MIT>.
"""
