//! Published results on the real throwing-action and combined
//! UCF-Crime+Throwing corpora.
//!
//! Reaching them needs the original videos and pretrained feature
//! extractors, so they serve as regression targets for users who supply
//! those features. Synthetic corpora cannot reproduce them.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTarget {
    pub name: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

/// Frame-level AUC (percent) of MFNet features on the throwing-action test split.
pub const THROWING_MFNET_AUC: ReferenceTarget =
    ReferenceTarget { name: "throwing-action, MFNet features", metric: "auc_percent", value: 86.10 };

/// Frame-level AUC (percent) on the combined corpus, concatenated features, mean-normal loss.
pub const COMBINED_MEAN_NORMAL_AUC: ReferenceTarget =
    ReferenceTarget { name: "combined, concatenated features, mean_normal loss", metric: "auc_percent", value: 80.13 };

/// False alarm rate on the combined corpus with the original loss.
pub const COMBINED_ORIGINAL_FAR: ReferenceTarget =
    ReferenceTarget { name: "combined, original loss", metric: "false_alarm_rate", value: 0.5667 };

/// False alarm rate on the combined corpus with the mean-normal loss.
pub const COMBINED_MEAN_NORMAL_FAR: ReferenceTarget =
    ReferenceTarget { name: "combined, mean_normal loss", metric: "false_alarm_rate", value: 0.4696 };

pub const TARGETS: [ReferenceTarget; 4] =
    [THROWING_MFNET_AUC, COMBINED_MEAN_NORMAL_AUC, COMBINED_ORIGINAL_FAR, COMBINED_MEAN_NORMAL_FAR];

/// Video counts of the throwing-action training split.
pub const THROWING_TRAIN_NORMAL: usize = 87;
pub const THROWING_TRAIN_ANOMALOUS: usize = 180;
