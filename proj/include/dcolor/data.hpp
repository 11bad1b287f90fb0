#pragma once

#include "dcolor/rng.hpp"
#include "dcolor/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dcolor {

enum class Modality { Vector, Image };

const char* modalityName(Modality m);

// Immutable after construction. Vector samples place the sparseDim
// class-determining coordinates first, followed by the dense ones. Image
// samples are row-major grayscale in [0, 1].
struct Dataset {
    Modality modality = Modality::Vector;
    std::size_t dim = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t sparseDim = 0;
    std::size_t numClasses = 0;
    std::vector<double> features;  // size() * dim
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const double> sample(std::size_t i) const {
        return {features.data() + i * dim, dim};
    }
    // Rows `indices` stacked into an indices.size() x dim matrix.
    Tensor rows(std::span<const std::size_t> indices) const;
    Dataset subset(std::span<const std::size_t> indices) const;
    std::uint64_t digest() const;
    void validate() const;
};

struct SparseDenseSpec {
    std::size_t numClasses = 2;
    std::size_t samples = 2000;
    std::size_t sparseDim = 4;
    std::size_t denseDim = 60;
    double sparseMagnitude = 1.0;
    double sparseNoise = 0.1;
    double denseNoise = 1.0;
    std::uint64_t seed = 0;
};

// Class k carries the sign pattern s_k[j] = +1 if j mod numClasses == k else
// -1, scaled by sparseMagnitude, on the sparse coordinates; Gaussian noise is
// added on top. Dense coordinates are class-independent Gaussian noise.
Dataset generateSparseDense(const SparseDenseSpec& spec);

struct AugmentationProtocol {
    Modality mode = Modality::Vector;
    // Vector mode.
    double denseNoise = 0.0;
    double denseDropout = 0.0;
    double scaleMin = 1.0;
    double scaleMax = 1.0;
    // Image mode.
    double mirrorProb = 0.0;
    double cropScaleMin = 1.0;
    double cropScaleMax = 1.0;
    double aspectMin = 1.0;
    double aspectMax = 1.0;
    double brightness = 0.0;
    double contrast = 0.0;

    // Throws ConfigError on out-of-range probabilities or crop ranges.
    void validate() const;
};

// Vector transform: dense coordinates get additive noise and dropout, then the
// whole vector is multiplied by one global scale draw. Sparse coordinates are
// touched only by the global scale.
std::vector<double> augmentVector(std::span<const double> sample, std::size_t sparseDim,
                                  const AugmentationProtocol& protocol, Rng& rng);

// Image transform: random-area crop with aspect jitter resampled back to the
// full size (bilinear), optional horizontal mirror, brightness/contrast.
std::vector<double> augmentImage(std::span<const double> pixels, std::size_t height, std::size_t width,
                                 const AugmentationProtocol& protocol, Rng& rng);

std::pair<std::vector<double>, std::vector<double>> augmentPair(const Dataset& ds, std::size_t index,
                                                                const AugmentationProtocol& protocol,
                                                                Rng& rng);

// Raw image set: "DCIM", u32 count, u32 height, u32 width, then count*h*w
// bytes. Labels live in a sibling file: "DCLB", u32 count, count bytes.
Dataset loadImageSet(const std::string& imagePath, const std::string& labelPath);
void saveImageSet(const std::string& imagePath, const std::string& labelPath, std::size_t height,
                  std::size_t width, std::span<const std::uint8_t> pixels, std::span<const std::uint8_t> labels);
std::string siblingLabelPath(const std::string& imagePath);

// One row per sample, label last.
void exportCsv(const Dataset& ds, const std::string& path);

} // namespace dcolor
