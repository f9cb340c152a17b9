"""Published detector figures used as fixed inputs by the replay checks."""

MODELS = ("DenseNet", "CNN", "ResNet", "LSTM", "Transformer")

# recall against the extreme random-delay attack
EXTREME_RECALL = {"DenseNet": 0.844, "CNN": 0.956, "ResNet": 0.994, "LSTM": 0.911, "Transformer": 0.966}

# recall under the learned attacks: (strategy, knowledge) -> model -> recall
ATTACK_RECALL = {
    ("smashgrab", "black"): {"DenseNet": 0.6989, "CNN": 0.6965, "ResNet": 0.7012, "LSTM": 0.7006, "Transformer": 0.7001},
    ("lowslow", "black"): {"DenseNet": 0.6978, "CNN": 0.6923, "ResNet": 0.6984, "LSTM": 0.6962, "Transformer": 0.6936},
    ("smashgrab", "grey"): {"DenseNet": 0.5997, "CNN": 0.2941, "ResNet": 0.6031, "LSTM": 0.6039, "Transformer": 0.5962},
    ("lowslow", "grey"): {"DenseNet": 0.2816, "CNN": 0.3131, "ResNet": 0.3142, "LSTM": 0.3688, "Transformer": 0.3173},
    ("smashgrab", "white"): {"DenseNet": 0.0017, "CNN": 0.0020, "ResNet": 0.0024, "LSTM": 0.0016, "Transformer": 0.0020},
    ("lowslow", "white"): {"DenseNet": 0.0006, "CNN": 0.0005, "ResNet": 0.0010, "LSTM": 0.0010, "Transformer": 0.0009},
}

# published recall reduction in percent, same keys
RECALL_REDUCTION = {
    ("smashgrab", "black"): {"DenseNet": 17.70, "CNN": 27.15, "ResNet": 29.56, "LSTM": 23.16, "Transformer": 27.54},
    ("lowslow", "black"): {"DenseNet": 17.34, "CNN": 27.61, "ResNet": 29.78, "LSTM": 23.61, "Transformer": 28.24},
    ("smashgrab", "grey"): {"DenseNet": 28.96, "CNN": 69.24, "ResNet": 39.34, "LSTM": 33.66, "Transformer": 38.30},
    ("lowslow", "grey"): {"DenseNet": 66.63, "CNN": 67.25, "ResNet": 68.41, "LSTM": 59.49, "Transformer": 67.19},
    ("smashgrab", "white"): {"DenseNet": 99.80, "CNN": 99.79, "ResNet": 99.76, "LSTM": 99.82, "Transformer": 99.79},
    ("lowslow", "white"): {"DenseNet": 99.93, "CNN": 99.95, "ResNet": 99.90, "LSTM": 99.89, "Transformer": 99.91},
}

# (alpha, beta, stealth, dThroughput %, dCycles %) on the low-and-slow validation sweep
ALPHA_BETA_ROWS = [
    (0.40, 0.60, 0.86, -2.6, 4.9),
    (0.50, 0.50, 0.87, -3.5, 6.6),
    (0.55, 0.45, 0.88, -4.1, 7.9),
    (0.60, 0.40, 0.86, -4.9, 9.2),
    (0.70, 0.30, 0.84, -5.6, 10.8),
]
SELECTED_ALPHA_BETA = (0.55, 0.45)
