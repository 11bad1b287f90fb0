#include "dcolor/data.hpp"

#include "binary_io.hpp"
#include "dcolor/error.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>

namespace dcolor {

const char* modalityName(Modality m) {
    return m == Modality::Vector ? "vector" : "image";
}

Tensor Dataset::rows(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw std::invalid_argument("Dataset::rows: empty index set");
    std::vector<double> out;
    out.reserve(indices.size() * dim);
    for (auto i : indices) {
        if (i >= size()) throw std::out_of_range("Dataset::rows: index " + std::to_string(i) + " out of range");
        auto s = sample(i);
        out.insert(out.end(), s.begin(), s.end());
    }
    return Tensor({indices.size(), dim}, std::move(out));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out = *this;
    out.features.clear();
    out.labels.clear();
    for (auto i : indices) {
        auto s = sample(i);
        out.features.insert(out.features.end(), s.begin(), s.end());
        out.labels.push_back(labels.at(i));
    }
    return out;
}

std::uint64_t Dataset::digest() const {
    std::string bytes;
    bytes.reserve(features.size() * 8 + labels.size() * 4 + 32);
    auto put = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put(static_cast<std::uint64_t>(modality));
    put(dim);
    put(height);
    put(width);
    put(sparseDim);
    put(numClasses);
    for (double f : features) put(std::bit_cast<std::uint64_t>(f));
    for (int l : labels) put(static_cast<std::uint64_t>(l));
    return fnv1a64(bytes);
}

void Dataset::validate() const {
    if (dim == 0) throw std::invalid_argument("dataset dimension must be positive");
    if (features.size() != labels.size() * dim) throw std::invalid_argument("dataset feature/label count mismatch");
    if (modality == Modality::Image && height * width != dim) {
        throw std::invalid_argument("image dataset dim must equal height*width");
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= numClasses) {
            throw std::invalid_argument("label " + std::to_string(l) + " outside [0, " + std::to_string(numClasses) + ")");
        }
    }
}

Dataset generateSparseDense(const SparseDenseSpec& spec) {
    if (spec.numClasses < 2) throw ConfigError("sparse/dense spec needs at least 2 classes");
    if (spec.sparseDim < spec.numClasses) {
        throw ConfigError("sparse/dense spec: sparseDim (" + std::to_string(spec.sparseDim) +
                          ") must be at least numClasses (" + std::to_string(spec.numClasses) + ")");
    }
    if (spec.samples == 0) throw ConfigError("sparse/dense spec: samples must be positive");
    if (spec.sparseNoise < 0 || spec.denseNoise < 0) throw ConfigError("sparse/dense spec: noise scales must be >= 0");

    Dataset ds;
    ds.modality = Modality::Vector;
    ds.sparseDim = spec.sparseDim;
    ds.dim = spec.sparseDim + spec.denseDim;
    ds.numClasses = spec.numClasses;
    ds.features.reserve(spec.samples * ds.dim);
    ds.labels.reserve(spec.samples);

    Rng rng(spec.seed);
    for (std::size_t i = 0; i < spec.samples; ++i) {
        const int label = static_cast<int>(i % spec.numClasses);
        for (std::size_t j = 0; j < spec.sparseDim; ++j) {
            const double sign = (j % spec.numClasses) == static_cast<std::size_t>(label) ? 1.0 : -1.0;
            ds.features.push_back(spec.sparseMagnitude * sign + spec.sparseNoise * rng.normal());
        }
        for (std::size_t j = 0; j < spec.denseDim; ++j) ds.features.push_back(spec.denseNoise * rng.normal());
        ds.labels.push_back(label);
    }
    return ds;
}

void AugmentationProtocol::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augmentation: ") + name + " must lie in [0, 1]");
    };
    auto range = [](double lo, double hi, const char* name) {
        if (!(lo > 0.0 && lo <= hi)) throw ConfigError(std::string("augmentation: ") + name + " range must satisfy 0 < min <= max");
    };
    if (mode == Modality::Vector) {
        if (denseNoise < 0.0) throw ConfigError("augmentation: dense noise scale must be >= 0");
        prob(denseDropout, "dense dropout");
        range(scaleMin, scaleMax, "scale jitter");
    } else {
        prob(mirrorProb, "mirror probability");
        range(cropScaleMin, cropScaleMax, "crop scale");
        if (cropScaleMax > 1.0) throw ConfigError("augmentation: crop scale range exceeds the image bounds (max > 1)");
        range(aspectMin, aspectMax, "aspect ratio");
        if (brightness < 0.0 || contrast < 0.0 || contrast >= 1.0) {
            throw ConfigError("augmentation: brightness must be >= 0 and contrast in [0, 1)");
        }
    }
}

std::vector<double> augmentVector(std::span<const double> sample, std::size_t sparseDim,
                                  const AugmentationProtocol& p, Rng& rng) {
    std::vector<double> out(sample.begin(), sample.end());
    for (std::size_t j = sparseDim; j < out.size(); ++j) {
        if (p.denseNoise > 0.0) out[j] += p.denseNoise * rng.normal();
        if (p.denseDropout > 0.0 && rng.bernoulli(p.denseDropout)) out[j] = 0.0;
    }
    if (p.scaleMin != 1.0 || p.scaleMax != 1.0) {
        const double s = rng.uniform(p.scaleMin, p.scaleMax);
        for (auto& v : out) v *= s;
    }
    return out;
}

std::vector<double> augmentImage(std::span<const double> pixels, std::size_t height, std::size_t width,
                                 const AugmentationProtocol& p, Rng& rng) {
    const std::size_t H = height, W = width;
    std::vector<double> out(pixels.begin(), pixels.end());

    const bool cropping = p.cropScaleMin != 1.0 || p.cropScaleMax != 1.0 || p.aspectMin != 1.0 || p.aspectMax != 1.0;
    if (cropping) {
        const double area = rng.uniform(p.cropScaleMin, p.cropScaleMax) * static_cast<double>(H * W);
        const double aspect = rng.uniform(p.aspectMin, p.aspectMax);  // width / height
        auto ch = static_cast<std::size_t>(std::lround(std::sqrt(area / aspect)));
        auto cw = static_cast<std::size_t>(std::lround(std::sqrt(area * aspect)));
        ch = std::clamp<std::size_t>(ch, 1, H);
        cw = std::clamp<std::size_t>(cw, 1, W);
        const std::size_t y0 = rng.below(H - ch + 1);
        const std::size_t x0 = rng.below(W - cw + 1);
        const double sy = static_cast<double>(ch) / static_cast<double>(H);
        const double sx = static_cast<double>(cw) / static_cast<double>(W);
        auto src = [&](std::size_t y, std::size_t x) { return pixels[y * W + x]; };
        for (std::size_t y = 0; y < H; ++y) {
            double fy = static_cast<double>(y0) + (static_cast<double>(y) + 0.5) * sy - 0.5;
            fy = std::clamp(fy, static_cast<double>(y0), static_cast<double>(y0 + ch - 1));
            const auto iy = static_cast<std::size_t>(std::floor(fy));
            const std::size_t iy1 = std::min(iy + 1, y0 + ch - 1);
            const double wy = fy - static_cast<double>(iy);
            for (std::size_t x = 0; x < W; ++x) {
                double fx = static_cast<double>(x0) + (static_cast<double>(x) + 0.5) * sx - 0.5;
                fx = std::clamp(fx, static_cast<double>(x0), static_cast<double>(x0 + cw - 1));
                const auto ix = static_cast<std::size_t>(std::floor(fx));
                const std::size_t ix1 = std::min(ix + 1, x0 + cw - 1);
                const double wx = fx - static_cast<double>(ix);
                const double top = (1.0 - wx) * src(iy, ix) + wx * src(iy, ix1);
                const double bottom = (1.0 - wx) * src(iy1, ix) + wx * src(iy1, ix1);
                out[y * W + x] = (1.0 - wy) * top + wy * bottom;
            }
        }
    }

    if (p.mirrorProb > 0.0 && rng.bernoulli(p.mirrorProb)) {
        for (std::size_t y = 0; y < H; ++y) std::reverse(out.begin() + static_cast<std::ptrdiff_t>(y * W),
                                                         out.begin() + static_cast<std::ptrdiff_t>((y + 1) * W));
    }

    if (p.brightness > 0.0 || p.contrast > 0.0) {
        const double b = p.brightness > 0.0 ? rng.uniform(-p.brightness, p.brightness) : 0.0;
        const double c = p.contrast > 0.0 ? rng.uniform(1.0 - p.contrast, 1.0 + p.contrast) : 1.0;
        double mean = 0.0;
        for (double v : out) mean += v;
        mean /= static_cast<double>(out.size());
        for (auto& v : out) v = std::clamp((v - mean) * c + mean + b, 0.0, 1.0);
    }
    return out;
}

std::pair<std::vector<double>, std::vector<double>> augmentPair(const Dataset& ds, std::size_t index,
                                                                const AugmentationProtocol& protocol, Rng& rng) {
    if (protocol.mode != ds.modality) {
        throw ConfigError(std::string("augmentation protocol is ") + modalityName(protocol.mode) +
                          " but the dataset is " + modalityName(ds.modality));
    }
    auto s = ds.sample(index);
    if (ds.modality == Modality::Vector) {
        auto v1 = augmentVector(s, ds.sparseDim, protocol, rng);
        auto v2 = augmentVector(s, ds.sparseDim, protocol, rng);
        return {std::move(v1), std::move(v2)};
    }
    auto v1 = augmentImage(s, ds.height, ds.width, protocol, rng);
    auto v2 = augmentImage(s, ds.height, ds.width, protocol, rng);
    return {std::move(v1), std::move(v2)};
}

// ---------------------------------------------------------------------------
// Raw image files

namespace {
constexpr std::string_view kImageMagic = "DCIM";
constexpr std::string_view kLabelMagic = "DCLB";
} // namespace

std::string siblingLabelPath(const std::string& imagePath) {
    std::filesystem::path p(imagePath);
    p.replace_extension(".labels");
    return p.string();
}

Dataset loadImageSet(const std::string& imagePath, const std::string& labelPath) {
    detail::ByteReader img(detail::readFile(imagePath), imagePath);
    if (img.bytes(kImageMagic.size(), "magic") != kImageMagic) img.fail("bad image-set magic", 0);
    const auto count = img.u32("image count");
    const std::size_t dimsAt = img.offset();
    const auto height = img.u32("height");
    const auto width = img.u32("width");
    if (count > 0 && (height == 0 || width == 0)) img.fail("zero image dimension", dimsAt);
    const std::size_t pixelsPer = static_cast<std::size_t>(height) * width;
    const std::size_t total = pixelsPer * count;
    if (img.remaining() < total) {
        img.fail("truncated pixel data: expected " + std::to_string(total) + " bytes, found " +
                 std::to_string(img.remaining()));
    }
    std::string raw = img.bytes(total, "pixels");
    if (!img.atEnd()) img.fail("trailing bytes after pixel data");

    detail::ByteReader lab(detail::readFile(labelPath), labelPath);
    if (lab.bytes(kLabelMagic.size(), "magic") != kLabelMagic) lab.fail("bad label-file magic", 0);
    const std::size_t countAt = lab.offset();
    const auto labelCount = lab.u32("label count");
    if (labelCount != count) {
        lab.fail("label count " + std::to_string(labelCount) + " does not match image count " + std::to_string(count),
                 countAt);
    }
    std::string labels = lab.bytes(labelCount, "labels");
    if (!lab.atEnd()) lab.fail("trailing bytes after labels");

    Dataset ds;
    ds.modality = Modality::Image;
    ds.height = height;
    ds.width = width;
    ds.dim = pixelsPer;
    ds.features.reserve(total);
    for (unsigned char c : raw) ds.features.push_back(static_cast<double>(c) / 255.0);
    int maxLabel = -1;
    for (unsigned char c : labels) {
        ds.labels.push_back(c);
        maxLabel = std::max(maxLabel, static_cast<int>(c));
    }
    ds.numClasses = static_cast<std::size_t>(maxLabel + 1);
    return ds;
}

void saveImageSet(const std::string& imagePath, const std::string& labelPath, std::size_t height,
                  std::size_t width, std::span<const std::uint8_t> pixels, std::span<const std::uint8_t> labels) {
    if (height * width == 0 || pixels.size() != labels.size() * height * width) {
        throw std::invalid_argument("saveImageSet: pixel buffer does not match count*height*width");
    }
    detail::ByteWriter img;
    img.bytes(kImageMagic);
    img.u32(static_cast<std::uint32_t>(labels.size()));
    img.u32(static_cast<std::uint32_t>(height));
    img.u32(static_cast<std::uint32_t>(width));
    img.bytes(std::string_view(reinterpret_cast<const char*>(pixels.data()), pixels.size()));
    detail::writeFile(imagePath, img.data());

    detail::ByteWriter lab;
    lab.bytes(kLabelMagic);
    lab.u32(static_cast<std::uint32_t>(labels.size()));
    lab.bytes(std::string_view(reinterpret_cast<const char*>(labels.data()), labels.size()));
    detail::writeFile(labelPath, lab.data());
}

void exportCsv(const Dataset& ds, const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    for (std::size_t j = 0; j < ds.dim; ++j) out << 'f' << j << ',';
    out << "label\n";
    out << std::setprecision(17);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.sample(i)) out << v << ',';
        out << ds.labels[i] << '\n';
    }
}

} // namespace dcolor
