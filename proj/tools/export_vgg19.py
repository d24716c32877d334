#!/usr/bin/env python3
"""Write torchvision VGG19 weights (layers up to conv4_1) as a dict the C++ side can pickle_load."""

import argparse

import torch
import torchvision

LAST_LAYER = 19  # conv4_1; the loss reads its output before the ReLU


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", help="output .pt file")
    ap.add_argument("--random", action="store_true", help="skip the ImageNet download (for tests)")
    args = ap.parse_args()

    weights = None if args.random else torchvision.models.VGG19_Weights.IMAGENET1K_V1
    model = torchvision.models.vgg19(weights=weights)
    state = {}
    for name, tensor in model.features.state_dict().items():
        index = int(name.split(".")[0])
        if index <= LAST_LAYER:
            state["features." + name] = tensor.detach().clone().contiguous()
    torch.save(state, args.out)
    print(f"wrote {len(state)} tensors to {args.out}")


if __name__ == "__main__":
    main()
