#pragma once

#include <cstddef>
#include <filesystem>

#include "vitloss/tensor.hpp"
#include "vitloss/vit.hpp"

// Raster I/O. Images are [H, W, C] tensors with values in [0, 1], obtained by
// dividing stored samples by the maximum of their bit depth.
namespace vitloss::image {

/// Reads 8/16-bit PNG (gray, gray+alpha, RGB, RGBA, palette; alpha dropped)
/// or binary PGM/PPM (P5/P6, maxval up to 65535). Format is detected from
/// the file signature.
Tensor<double> read(const std::filesystem::path& path);

/// Writes an 8- or 16-bit PNG. Values are clamped to [0, 1] and rounded.
void write_png(const Tensor<double>& image, const std::filesystem::path& path, int bit_depth = 8);

/// Writes binary PGM (C = 1) or PPM (C = 3), maxval 255 or 65535.
void write_pnm(const Tensor<double>& image, const std::filesystem::path& path, int bit_depth = 8);

Tensor<double> center_crop(const Tensor<double>& image, std::size_t size);

/// Brings an image to the encoder's input: center-crops larger images
/// (or refuses with ContractError when `allow_crop` is false), rejects
/// smaller ones, and expands gray to the encoder's channel count.
Tensor<double> fit_to_encoder(const Tensor<double>& image, const ViTConfig& config,
                              bool allow_crop = true);

}  // namespace vitloss::image
