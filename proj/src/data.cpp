#include "fairspec/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fairspec/error.hpp"
#include "fairspec/rng.hpp"

namespace fairspec {

void Dataset::validate(bool require_all_classes) const {
    if (features.rows() != static_cast<Eigen::Index>(labels.size()))
        throw DimensionMismatch("Dataset: " + std::to_string(features.rows()) + " feature rows vs " +
                                std::to_string(labels.size()) + " labels");
    if (num_classes < 1) throw InvalidArgument("Dataset: num_classes must be positive");
    for (int y : labels)
        if (y < 0 || y >= num_classes) throw InvalidArgument("Dataset: label " + std::to_string(y) + " out of range");
    require_finite(features, "Dataset features");
    if (require_all_classes) class_counts_checked(labels, num_classes);
}

std::vector<int> class_counts_checked(std::span<const int> labels, int num_classes) {
    std::vector<int> counts(num_classes, 0);
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw InvalidArgument("label " + std::to_string(y) + " out of range");
        ++counts[y];
    }
    for (int j = 0; j < num_classes; ++j)
        if (counts[j] == 0) throw MissingClass("class " + std::to_string(j) + " has no samples", j);
    return counts;
}

ClassStats class_stats(const Dataset& ds) {
    if (ds.size() == 0) throw InvalidArgument("class_stats: empty dataset");
    ClassStats s;
    s.counts.assign(ds.num_classes, 0);
    for (int y : ds.labels) ++s.counts.at(y);
    s.m_min = *std::min_element(s.counts.begin(), s.counts.end());
    s.input_radius = ds.features.rowwise().norm().maxCoeff();
    return s;
}

Dataset subset(const Dataset& ds, std::span<const int> indices) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.features.resize(static_cast<Eigen::Index>(indices.size()), ds.features.cols());
    out.labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        out.features.row(static_cast<Eigen::Index>(k)) = ds.features.row(indices[k]);
        out.labels.push_back(ds.labels.at(indices[k]));
    }
    return out;
}

std::span<const int> BatchPlan::batch(int b) const {
    const std::size_t begin = static_cast<std::size_t>(b) * batch_size;
    const std::size_t end = std::min(permutation.size(), begin + batch_size);
    return {permutation.data() + begin, end - begin};
}

BatchPlan make_batch_plan(int m, int batch_size, std::uint64_t seed) {
    if (batch_size < 1) throw InvalidArgument("make_batch_plan: batch_size must be positive");
    BatchPlan plan{seed, batch_size, std::vector<int>(m)};
    for (int i = 0; i < m; ++i) plan.permutation[i] = i;
    Rng rng(seed);
    for (int i = m - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(plan.permutation[i], plan.permutation[j]);
    }
    return plan;
}

// ---- IDX --------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) { return fmt::format("0x{:08X}", v); }

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16) throw TruncatedFile("IDX images: header shorter than 16 bytes");
    const std::uint32_t magic = read_be32(bytes, 0);
    if (magic != kIdxImagesMagic)
        throw BadMagic("IDX images: magic " + hex32(magic) + ", expected " + hex32(kIdxImagesMagic));
    IdxImages img;
    img.count = read_be32(bytes, 4);
    img.rows = read_be32(bytes, 8);
    img.cols = read_be32(bytes, 12);
    const std::uint64_t payload = std::uint64_t{img.count} * img.rows * img.cols;
    if (bytes.size() - 16 < payload)
        throw TruncatedFile("IDX images: expected " + std::to_string(payload) + " pixel bytes, found " +
                            std::to_string(bytes.size() - 16));
    img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
    return img;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) throw TruncatedFile("IDX labels: header shorter than 8 bytes");
    const std::uint32_t magic = read_be32(bytes, 0);
    if (magic != kIdxLabelsMagic)
        throw BadMagic("IDX labels: magic " + hex32(magic) + ", expected " + hex32(kIdxLabelsMagic));
    const std::uint32_t count = read_be32(bytes, 4);
    if (bytes.size() - 8 < count)
        throw TruncatedFile("IDX labels: expected " + std::to_string(count) + " label bytes, found " +
                            std::to_string(bytes.size() - 8));
    return {bytes.begin() + 8, bytes.begin() + 8 + count};
}

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + images.pixels.size());
    write_be32(out, kIdxImagesMagic);
    write_be32(out, images.count);
    write_be32(out, images.rows);
    write_be32(out, images.cols);
    out.insert(out.end(), images.pixels.begin(), images.pixels.end());
    return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + labels.size());
    write_be32(out, kIdxLabelsMagic);
    write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = parse_idx_images(read_file_bytes(images_path));
    const auto lab = parse_idx_labels(read_file_bytes(labels_path));
    if (img.count != lab.size())
        throw CountMismatch("IDX: " + std::to_string(img.count) + " images but " + std::to_string(lab.size()) +
                            " labels");
    Dataset ds;
    ds.num_classes = 10;
    const auto d = static_cast<Eigen::Index>(img.rows) * img.cols;
    ds.features.resize(img.count, d);
    for (Eigen::Index i = 0; i < ds.features.size(); ++i) ds.features.data()[i] = img.pixels[i] / 255.0;
    ds.labels.reserve(lab.size());
    for (std::uint8_t y : lab) {
        if (y >= 10) throw FormatError("IDX labels: label " + std::to_string(y) + " outside 0..9");
        ds.labels.push_back(y);
    }
    return ds;
}

void save_mnist_idx(const Dataset& ds, std::uint32_t rows, std::uint32_t cols,
                    const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    if (static_cast<Eigen::Index>(rows) * cols != ds.features.cols())
        throw DimensionMismatch("save_mnist_idx: rows*cols does not match feature dimension");
    IdxImages img{static_cast<std::uint32_t>(ds.size()), rows, cols, {}};
    img.pixels.resize(static_cast<std::size_t>(ds.features.size()));
    for (Eigen::Index i = 0; i < ds.features.size(); ++i) {
        const double p = std::round(ds.features.data()[i] * 255.0);
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
    }
    std::vector<std::uint8_t> lab(ds.labels.begin(), ds.labels.end());
    write_file_bytes(images_path, encode_idx_images(img));
    write_file_bytes(labels_path, encode_idx_labels(lab));
}

// ---- Synthetic blobs ----------------------------------------------------------

MatrixXd blob_centers(int dim, int num_classes, double centers_scale, std::uint64_t seed) {
    if (dim < 1 || num_classes < 1) throw InvalidArgument("blob_centers: dim and num_classes must be positive");
    if (!(centers_scale >= 0)) throw InvalidArgument("blob_centers: centers_scale must be nonnegative");
    MatrixXd centers(num_classes, dim);
    Rng rng(derive_seed(seed, {0xC0FFEE}));
    double radius = std::max(centers_scale, 1e-12);
    int placed = 0;
    int rejections = 0;
    while (placed < num_classes) {
        // Uniform point in the ball of the current radius.
        VectorXd c(dim);
        for (int k = 0; k < dim; ++k) c[k] = rng.normal();
        const double n = c.norm();
        if (n == 0) continue;
        c *= radius * std::pow(rng.uniform(), 1.0 / dim) / n;
        bool ok = true;
        for (int j = 0; j < placed && ok; ++j) ok = (centers.row(j).transpose() - c).norm() >= centers_scale;
        if (ok) {
            centers.row(placed++) = c.transpose();
        } else if (++rejections % 200 == 0) {
            radius *= 1.1;
        }
    }
    return centers;
}

Dataset synth_blobs(const BlobParams& p, std::uint64_t seed, std::uint64_t split) {
    if (p.num_classes < 2) throw InvalidArgument("synth_blobs: need at least two classes");
    if (static_cast<int>(p.counts.size()) != p.num_classes)
        throw InvalidArgument("synth_blobs: counts must have one entry per class");
    for (int c : p.counts)
        if (c < 1) throw InvalidArgument("synth_blobs: every class count must be at least 1");
    if (!(p.noise_std >= 0)) throw InvalidArgument("synth_blobs: noise_std must be nonnegative");

    const MatrixXd centers = blob_centers(p.dim, p.num_classes, p.centers_scale, seed);
    Dataset ds;
    ds.num_classes = p.num_classes;
    int m = 0;
    for (int c : p.counts) m += c;
    ds.features.resize(m, p.dim);
    ds.labels.reserve(m);
    Rng rng(derive_seed(seed, {0x5A3B1E5, split}));
    int q = 0;
    for (int j = 0; j < p.num_classes; ++j) {
        for (int k = 0; k < p.counts[j]; ++k, ++q) {
            for (int i = 0; i < p.dim; ++i) ds.features(q, i) = centers(j, i) + p.noise_std * rng.normal();
            ds.labels.push_back(j);
        }
    }
    return ds;
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds, std::uint64_t seed,
                       const std::string& comment) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "d,d_y,seed\n" << ds.dim() << ',' << ds.num_classes << ',' << seed << '\n';
    for (int q = 0; q < ds.size(); ++q) {
        for (int i = 0; i < ds.dim(); ++i) out << fmt::format("{}", ds.features(q, i)) << ',';
        out << ds.labels[q] << '\n';
    }
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    while (std::getline(in, line) && line.starts_with('#')) {
    }
    if (!in || line != "d,d_y,seed") throw FormatError(path.string() + ": bad CSV header");
    if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header values");
    int d = 0, d_y = 0;
    {
        std::istringstream hs(line);
        char comma = 0;
        if (!(hs >> d >> comma >> d_y) || d < 1 || d_y < 1) throw FormatError(path.string() + ": bad header values");
    }
    std::vector<double> values;
    std::vector<int> labels;
    int row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row;
        std::size_t pos = 0;
        for (int i = 0; i <= d; ++i) {
            const std::size_t next = line.find(',', pos);
            const bool last = i == d;
            if (last != (next == std::string::npos))
                throw FormatError(path.string() + ": row " + std::to_string(row) + " has wrong field count");
            const std::string field = line.substr(pos, last ? std::string::npos : next - pos);
            char* end = nullptr;
            if (last) {
                const long y = std::strtol(field.c_str(), &end, 10);
                if (*end != '\0') throw FormatError(path.string() + ": bad label in row " + std::to_string(row));
                labels.push_back(static_cast<int>(y));
            } else {
                const double v = std::strtod(field.c_str(), &end);
                if (*end != '\0' || field.empty())
                    throw FormatError(path.string() + ": bad value in row " + std::to_string(row));
                values.push_back(v);
            }
            pos = next + 1;
        }
    }
    Dataset ds;
    ds.num_classes = d_y;
    ds.labels = std::move(labels);
    ds.features = Eigen::Map<const MatrixXd>(values.data(), static_cast<Eigen::Index>(ds.labels.size()), d);
    ds.validate(false);
    return ds;
}

}  // namespace fairspec
