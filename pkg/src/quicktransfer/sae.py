"""Sparse autoencoders, greedy layer-wise stacking and teacher fine-tuning."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DomainError, NumericError, TrainingError
from .nn import (
    ActivationKind,
    Layer,
    Network,
    activation_grad,
    apply_step,
    backward,
    forward,
    random_layer,
)

KL_EPS = 1e-8


@dataclass
class SaeHyperParams:
    lambda_decay: float = 0.05
    rho: float = 0.1
    beta: float = 0.8
    epochs: int = 200
    learning_rate: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"rho must lie strictly inside (0, 1), got {self.rho}")
        if self.lambda_decay < 0 or self.beta < 0:
            raise ConfigError("lambda_decay and beta must be non-negative")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        self.epochs = int(self.epochs)


@dataclass
class Autoencoder:
    encoder: Layer
    decoder: Layer
    losses: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        if self.decoder.n_out != self.encoder.n_in or self.decoder.n_in != self.encoder.n_out:
            raise ConfigError("decoder shape must mirror encoder shape")

    def encode(self, X):
        return self.encoder(X)

    def reconstruct(self, X):
        return self.decoder(self.encoder(X))


def bernoulli_kl(rho, rho_hat):
    """KL(rho || rho_hat) between Bernoulli distributions, elementwise in rho_hat.

    ``rho_hat`` is clamped to [1e-8, 1 - 1e-8] first.
    """
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho must lie strictly inside (0, 1), got {rho}")
    r = np.clip(rho_hat, KL_EPS, 1.0 - KL_EPS)
    return rho * np.log(rho / r) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - r))


def ae_loss_terms(ae, X, hp):
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        H = ae.encoder(X)
        R = ae.decoder(H)
        recon = 0.5 * np.sum((R - X) ** 2) / n
        decay = 0.5 * hp.lambda_decay * (np.sum(ae.encoder.weights ** 2)
                                         + np.sum(ae.decoder.weights ** 2))
        sparsity = hp.beta * np.sum(bernoulli_kl(hp.rho, H.mean(axis=0)))
    return {"recon": recon, "decay": decay, "sparsity": sparsity}, H, R


def ae_loss_and_grad(ae, X, hp):
    """Sparse autoencoder cost and its gradient.

    Returns ``(loss, ((dWe, dbe), (dWd, dbd)))``. The sparsity gradient
    flows through the batch-mean activation, so every sample's hidden unit
    receives the same ``beta * dKL/drho_hat / N`` term.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DataError("autoencoder input must be a non-empty matrix")
    terms, H, R = ae_loss_terms(ae, X, hp)
    for name, value in terms.items():
        if not np.isfinite(value):
            raise NumericError(f"non-finite {name} term in autoencoder loss")
    loss = terms["recon"] + terms["decay"] + terms["sparsity"]
    n = X.shape[0]

    dz_dec = (R - X) / n * activation_grad(ae.decoder.activation, R)
    dWd = dz_dec.T @ H + hp.lambda_decay * ae.decoder.weights
    dbd = dz_dec.sum(axis=0)

    rho_hat = H.mean(axis=0)
    inside = (rho_hat > KL_EPS) & (rho_hat < 1.0 - KL_EPS)
    r = np.clip(rho_hat, KL_EPS, 1.0 - KL_EPS)
    dkl = (-hp.rho / r + (1.0 - hp.rho) / (1.0 - r)) * inside
    dH = dz_dec @ ae.decoder.weights + hp.beta * dkl / n
    dz_enc = dH * activation_grad(ae.encoder.activation, H)
    dWe = dz_enc.T @ X + hp.lambda_decay * ae.encoder.weights
    dbe = dz_enc.sum(axis=0)
    return loss, ((dWe, dbe), (dWd, dbd))


def init_autoencoder(n_in, hidden_size, seed, encoder_activation=ActivationKind.SIGMOID,
                     decoder_activation=ActivationKind.SIGMOID):
    rng = np.random.default_rng(seed)
    enc = random_layer(rng, n_in, hidden_size, encoder_activation)
    dec = random_layer(rng, hidden_size, n_in, decoder_activation)
    return Autoencoder(enc, dec)


def train_autoencoder(X, hidden_size, hp, seed=0, encoder_activation=ActivationKind.SIGMOID,
                      decoder_activation=ActivationKind.SIGMOID, callback=None):
    """Full-batch gradient descent on the sparse autoencoder cost.

    ``ae.losses`` holds the loss before each step plus the final loss.
    """
    X = np.asarray(X, dtype=float)
    if int(hidden_size) < 1:
        raise ConfigError("hidden_size must be >= 1")
    ae = init_autoencoder(X.shape[1], int(hidden_size), seed, encoder_activation, decoder_activation)
    enc, dec = ae.encoder, ae.decoder
    losses = []
    for epoch in range(hp.epochs + 1):
        try:
            loss, ((dWe, dbe), (dWd, dbd)) = ae_loss_and_grad(Autoencoder(enc, dec), X, hp)
        except NumericError as exc:
            raise TrainingError(f"autoencoder diverged at epoch {epoch}: {exc}", epoch) from exc
        losses.append(float(loss))
        if callback is not None:
            callback(epoch, float(loss))
        if epoch == hp.epochs:
            break
        eta = hp.learning_rate
        new_we, new_wd = enc.weights - eta * dWe, dec.weights - eta * dWd
        if not (np.all(np.isfinite(new_we)) and np.all(np.isfinite(new_wd))):
            raise TrainingError(f"autoencoder diverged at epoch {epoch}", epoch)
        enc = Layer(new_we, enc.bias - eta * dbe, enc.activation)
        dec = Layer(new_wd, dec.bias - eta * dbd, dec.activation)
    return Autoencoder(enc, dec, losses)


# -- supervised losses on softmax outputs -----------------------------------


def one_hot(y, n_classes):
    y = np.asarray(y, dtype=int)
    out = np.zeros((y.size, n_classes))
    out[np.arange(y.size), y] = 1.0
    return out


def check_labels(y, n_classes):
    y = np.asarray(y)
    if y.ndim != 1 or (y.size and not np.all(y == np.round(y))):
        raise DataError("labels must be a 1-D array of integers")
    y = y.astype(int)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise DataError(f"labels must lie in 0..{n_classes - 1}, got range {y.min()}..{y.max()}")
    return y


def mse_softmax_loss(probabilities, y):
    """Mean over all N*C entries of (softmax - onehot)^2."""
    t = one_hot(y, probabilities.shape[1])
    return float(np.mean((probabilities - t) ** 2))


def mse_softmax_dlogits(probabilities, y):
    p = probabilities
    t = one_hot(y, p.shape[1])
    g = 2.0 * (p - t) / p.size
    return p * (g - np.sum(g * p, axis=1, keepdims=True))


def ce_loss(probabilities, y):
    p = probabilities[np.arange(len(y)), y]
    return float(np.mean(-np.log(np.maximum(p, 1e-12))))


def ce_dlogits(probabilities, y):
    n = len(y)
    d = probabilities - one_hot(y, probabilities.shape[1])
    # the 1e-12 floor cuts the gradient of saturated samples
    d[probabilities[np.arange(n), y] < 1e-12] = 0.0
    return d / n


SUPERVISED_LOSSES = {
    "mse": (mse_softmax_loss, mse_softmax_dlogits),
    "ce": (ce_loss, ce_dlogits),
}


def supervised_step(net, X, y, loss="mse"):
    loss_fn, dlogits_fn = SUPERVISED_LOSSES[loss]
    trace = forward(net, X)
    value = loss_fn(trace.probabilities, y)
    grads = backward(net, trace, d_logits=dlogits_fn(trace.probabilities, y))
    return value, grads


def stack_encoders(encoders, n_classes, seed):
    rng = np.random.default_rng(seed)
    clf = random_layer(rng, encoders[-1].n_out, n_classes, ActivationKind.IDENTITY)
    return Network(encoders[0].n_in, [Layer(e.weights.copy(), e.bias.copy(), e.activation)
                                      for e in encoders], clf)


def train_teacher(X, y, arch, hp, ft_epochs, seed=0, n_classes=None, ft_learning_rate=None,
                  ft_loss="mse", activation=ActivationKind.SIGMOID, callback=None):
    """Greedy sparse-AE pretraining of ``arch`` hidden widths, then supervised fine-tuning.

    ``callback(stage, layer, epoch, loss)`` sees every recorded loss, with
    stage ``"pretrain"`` (layer = 1-based AE index) or ``"finetune"``.
    """
    X = np.asarray(X, dtype=float)
    arch = [int(w) for w in arch]
    if not arch or any(w < 1 for w in arch):
        raise ConfigError(f"teacher needs a non-empty list of positive hidden widths, got {arch}")
    if n_classes is None:
        n_classes = int(np.max(y)) + 1
    y = check_labels(y, n_classes)
    if ft_loss not in SUPERVISED_LOSSES:
        raise ConfigError(f"unknown fine-tune loss {ft_loss!r}")

    encoders = []
    rep = X
    for i, width in enumerate(arch, start=1):
        cb = None if callback is None else (lambda e, l, i=i: callback("pretrain", i, e, l))
        ae = train_autoencoder(rep, width, hp, seed=seed + i, encoder_activation=activation,
                               decoder_activation=ActivationKind.SIGMOID, callback=cb)
        encoders.append(ae.encoder)
        rep = ae.encoder(rep)

    net = stack_encoders(encoders, n_classes, seed)
    eta = hp.learning_rate if ft_learning_rate is None else ft_learning_rate
    for epoch in range(ft_epochs + 1):
        loss, grads = supervised_step(net, X, y, ft_loss)
        if not np.isfinite(loss):
            raise TrainingError(f"teacher fine-tuning diverged at epoch {epoch}", epoch)
        if callback is not None:
            callback("finetune", 0, epoch, loss)
        if epoch == ft_epochs:
            break
        try:
            net = apply_step(net, grads, eta)
        except ValueError as exc:
            raise TrainingError(f"teacher fine-tuning diverged at epoch {epoch}", epoch) from exc
    return net
