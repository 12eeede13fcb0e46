"""Model persistence as a JSON document"""

import json
import logging

from .. import params
from ..errors import ConfigError
from .model import GpDataset, GpHyperparams, GpModel

def model_to_document(model):
    return {
        "format_version": params.MODEL_FORMAT_VERSION,
        "dims": model.state_dim,
        "hyperparams": [
            {
                "signal_variance": hp.signal_variance,
                "noise_variance": hp.noise_variance,
                "scales": hp.scales.tolist(),
            }
            for hp in model.hyperparams
        ],
        "log_likelihoods": None if model.log_likelihoods is None else list(model.log_likelihoods),
        "dataset": {
            "inputs": model.dataset.inputs.tolist(),
            "targets": model.dataset.targets.tolist(),
        },
    }

def model_from_document(document):
    """Rebuild a model, refactorizing every Gram matrix"""
    try:
        if document["format_version"] != params.MODEL_FORMAT_VERSION:
            raise ConfigError("format_version", f"unsupported model format {document['format_version']}")
        dataset = GpDataset(document["dataset"]["inputs"], document["dataset"]["targets"])
        hyperparams = [
            GpHyperparams(entry["signal_variance"], entry["noise_variance"], entry["scales"])
            for entry in document["hyperparams"]
        ]
        if len(hyperparams) != document["dims"]:
            raise ConfigError("dims", "does not match the number of hyperparameter sets")
        return GpModel.from_hyperparams(dataset, hyperparams, document.get("log_likelihoods"))
    except KeyError as err:
        raise ConfigError(str(err.args[0]), "missing from model document") from err
    except (TypeError, ValueError) as err:
        raise ConfigError("model", str(err)) from err

def save_model(model, path):
    with open(path, "w", encoding="utf-8") as file:
        json.dump(model_to_document(model), file, sort_keys=True, indent=1)
        file.write("\n")
    logging.info("Wrote model to '%s'", path)

def load_model(path):
    try:
        with open(path, "r", encoding="utf-8") as file:
            document = json.load(file)
    except FileNotFoundError as err:
        raise ConfigError("model_path", f"model file '{path}' does not exist") from err
    except json.JSONDecodeError as err:
        raise ConfigError("model_path", f"'{path}' is not valid JSON: {err}") from err
    return model_from_document(document)
