from .cluster import Cluster, cluster_banners
from .distance import pairwise_distance_matrix, substring_min_levenshtein
from .mining import mine_frequent_substrings
from .rules import (
    BannerRecord,
    FingerprintRule,
    LabelAssignment,
    LabelResult,
    RuleAudit,
    apply_rules,
    audit_rules,
    iterate_labeling,
    load_banners,
    load_rules,
    load_vendor_names,
    regex_match_vendor,
    save_banners,
    save_rules,
)

__all__ = [
    "BannerRecord",
    "Cluster",
    "FingerprintRule",
    "LabelAssignment",
    "LabelResult",
    "RuleAudit",
    "apply_rules",
    "audit_rules",
    "cluster_banners",
    "iterate_labeling",
    "load_banners",
    "load_rules",
    "load_vendor_names",
    "mine_frequent_substrings",
    "pairwise_distance_matrix",
    "regex_match_vendor",
    "save_banners",
    "save_rules",
    "substring_min_levenshtein",
]
