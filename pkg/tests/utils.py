import os

from epiforge.seird import CompartmentFields, SeirdParams

SEED = 20210101

TINY_SCENARIO = """\
# 4 x 4 grid, a few days, small enough for unit tests
nx = 4
ny = 4
dx = 1.0
days = {days}
step = 0.25
cadence = 1

phi_i = 0.5
phi_e = 0.2
alpha_inc = 0.2
gamma_e = 0.1
gamma_i = 0.1
delta = 0.01
nu_s = 0.05
nu_e = 0.05
nu_i = 0.02
nu_r = 0.05
allee = 0.01

background_s = 1.0
bump.s = 2.0, 1.5, 1.5, 1.0
bump.e = 0.05, 1.5, 1.5, 1.0
bump.i = 0.05, 2.5, 2.5, 1.0

mode = {mode}
model = {model}
layers = 2
hidden = 3
learning_rate = 0.01
pretrain_epochs = {pretrain_epochs}
finetune_epochs = {finetune_epochs}
train_days = {train_days}
seed = 3
noise = {noise}
"""


def tiny_scenario(days=8, mode='aggregate', model='drrnn', pretrain_epochs=3, finetune_epochs=2,
                  train_days=5, noise=0.0):
    return TINY_SCENARIO.format(days=days, mode=mode, model=model, pretrain_epochs=pretrain_epochs,
                                finetune_epochs=finetune_epochs, train_days=train_days, noise=noise)


def write_file(directory, name, text):
    path = os.path.join(directory, name)
    with open(path, 'w') as f:
        f.write(text)
    return path


def random_state(rng, n_cells, low=0.1, high=1.0):
    """A physical state with every density in [low, high)."""
    return CompartmentFields(*[rng.uniform(low, high, size=n_cells) for _ in range(5)])


def random_params(rng, diffusion=True):
    nu = (lambda: rng.uniform(0.01, 0.2)) if diffusion else (lambda: 0.0)
    return SeirdParams(
        phi_i=rng.uniform(0.1, 1.0), phi_e=rng.uniform(0.1, 0.5),
        alpha_inc=rng.uniform(0.1, 0.5), gamma_e=rng.uniform(0.05, 0.3),
        gamma_i=rng.uniform(0.05, 0.3), delta=rng.uniform(0.0, 0.05),
        nu_s=nu(), nu_e=nu(), nu_i=nu(), nu_r=nu(), allee=rng.uniform(0.0, 0.05))
