import pytest
import torch
from torch import nn


@pytest.fixture
def mlp_checkpoint(tmp_path):
    """3-layer tanh MLP saved as a full nn.Sequential."""
    torch.manual_seed(10)
    model = nn.Sequential(
        nn.Linear(4, 16), nn.Tanh(),
        nn.Linear(16, 16), nn.Tanh(),
        nn.Linear(16, 1), nn.Tanh(),
    )
    path = tmp_path / "mlp.pt"
    torch.save(model, path)
    return str(path)


@pytest.fixture
def cnn_checkpoint(tmp_path):
    """conv + pool classifier head saved as a full nn.Sequential."""
    torch.manual_seed(11)
    model = nn.Sequential(
        nn.Conv2d(1, 3, 3),
        nn.ReLU(),
        nn.MaxPool2d(2, 2),
        nn.Flatten(),
        nn.Linear(3 * 3 * 3, 2),
    )
    path = tmp_path / "cnn.pt"
    torch.save(model, path)
    return str(path)


@pytest.fixture
def state_dict_checkpoint(tmp_path):
    """The same kind of MLP saved as a bare state dict (ambiguous arch)."""
    torch.manual_seed(12)
    model = nn.Sequential(
        nn.Linear(2, 8), nn.Sigmoid(),
        nn.Linear(8, 1),
    )
    path = tmp_path / "state.pt"
    torch.save(model.state_dict(), path)
    return str(path), model
