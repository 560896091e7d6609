#include "gaproto/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "binary_io.hpp"
#include "gaproto/error.hpp"

namespace gaproto {

namespace detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string() + " for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) fail(ErrorKind::io, "read error on " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorKind::io, "write error on " + path.string());
}

}  // namespace detail

void validate(const EmbeddingDataset& ds) {
    require(ds.count() > 0, "dataset must contain at least one sample");
    require(ds.dim > 0, "embedding dimension must be positive");
    require(ds.num_classes >= 2, "dataset needs at least 2 classes");
    require(ds.embeddings.size() == ds.count() * ds.dim,
            "embedding block has " + std::to_string(ds.embeddings.size()) + " values, expected " +
                std::to_string(ds.count() * ds.dim));
    for (std::size_t i = 0; i < ds.count(); ++i) {
        require(ds.labels[i] < ds.num_classes, "label " + std::to_string(ds.labels[i]) + " at row " +
                                                   std::to_string(i) + " is not below num_classes");
    }
    require(std::all_of(ds.embeddings.begin(), ds.embeddings.end(), [](float v) { return std::isfinite(v); }),
            "embeddings contain non-finite values");
    if (ds.texts) require(ds.texts->size() == ds.count(), "texts count does not match sample count");
}

EmbeddingDataset select_rows(const EmbeddingDataset& ds, std::span<const std::size_t> indices) {
    EmbeddingDataset out;
    out.dim = ds.dim;
    out.num_classes = ds.num_classes;
    out.labels.reserve(indices.size());
    out.embeddings.reserve(indices.size() * ds.dim);
    if (ds.texts) out.texts.emplace();
    for (std::size_t idx : indices) {
        if (idx >= ds.count()) fail(ErrorKind::out_of_range, "row index " + std::to_string(idx) + " out of range");
        out.labels.push_back(ds.labels[idx]);
        const auto r = ds.row(idx);
        out.embeddings.insert(out.embeddings.end(), r.begin(), r.end());
        if (ds.texts) out.texts->push_back((*ds.texts)[idx]);
    }
    return out;
}

Matrix to_matrix(const EmbeddingDataset& ds) {
    Matrix m(ds.count(), ds.dim);
    auto dst = m.values();
    for (std::size_t i = 0; i < ds.embeddings.size(); ++i) dst[i] = static_cast<double>(ds.embeddings[i]);
    return m;
}

std::vector<std::uint8_t> encode_gape(const EmbeddingDataset& ds) {
    validate(ds);
    require(ds.dim <= UINT32_MAX, "embedding dimension does not fit in u32");
    detail::ByteWriter w;
    w.bytes("GAPE");
    w.u32(kGapeVersion);
    w.u64(ds.count());
    w.u32(static_cast<std::uint32_t>(ds.dim));
    w.u32(ds.num_classes);
    w.u32(ds.texts ? kGapeFlagTexts : 0u);
    for (auto label : ds.labels) w.u32(label);
    for (float v : ds.embeddings) w.f32(v);
    if (ds.texts) {
        for (const auto& t : *ds.texts) {
            require(t.size() <= UINT32_MAX, "text record too long");
            w.u32(static_cast<std::uint32_t>(t.size()));
            w.bytes(t);
        }
    }
    return w.take();
}

EmbeddingDataset decode_gape(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    if (bytes.size() < 4 || r.bytes(4, "magic") != "GAPE") fail(ErrorKind::format, "not a GAPE file (bad magic)");
    const auto version = r.u32("header");
    if (version != kGapeVersion) fail(ErrorKind::format, "unsupported GAPE version " + std::to_string(version));
    const std::uint64_t n = r.u64("header");
    const std::uint32_t dim = r.u32("header");
    const std::uint32_t num_classes = r.u32("header");
    const std::uint32_t flags = r.u32("header");
    if (n == 0) fail(ErrorKind::format, "corrupt header: sample count is zero");
    if (dim == 0) fail(ErrorKind::format, "corrupt header: dimension is zero");
    if (num_classes < 2) fail(ErrorKind::format, "corrupt header: fewer than 2 classes");
    if ((flags & ~kGapeFlagTexts) != 0) fail(ErrorKind::format, "corrupt header: unknown flag bits");

    // Guard the fixed-size blocks before allocating anything sized by the header.
    const std::uint64_t label_bytes = n * 4;
    if (n > (UINT64_MAX / 4) / (std::uint64_t{dim} + 1)) fail(ErrorKind::format, "truncated file: header counts overflow");
    const std::uint64_t embedding_bytes = n * dim * 4;
    r.need(label_bytes + embedding_bytes, "labels and embeddings");

    EmbeddingDataset ds;
    ds.dim = dim;
    ds.num_classes = num_classes;
    ds.labels.resize(n);
    for (auto& label : ds.labels) {
        label = r.u32("labels");
        if (label >= num_classes) fail(ErrorKind::format, "corrupt labels: label " + std::to_string(label) +
                                                              " >= num_classes " + std::to_string(num_classes));
    }
    ds.embeddings.resize(n * dim);
    for (auto& v : ds.embeddings) {
        v = r.f32("embeddings");
        if (!std::isfinite(v)) fail(ErrorKind::format, "corrupt embeddings: non-finite value");
    }
    if (flags & kGapeFlagTexts) {
        ds.texts.emplace();
        ds.texts->reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            const auto len = r.u32("text record");
            ds.texts->push_back(r.bytes(len, "text record"));
        }
    }
    if (r.remaining() != 0) {
        fail(ErrorKind::format, "corrupt file: " + std::to_string(r.remaining()) + " trailing bytes");
    }
    return ds;
}

void write_gape(const EmbeddingDataset& dataset, const std::filesystem::path& path) {
    const auto bytes = encode_gape(dataset);
    detail::write_file(path, bytes);
}

EmbeddingDataset read_gape(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    try {
        return decode_gape(bytes);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

EmbeddingDataset gen_synthetic(const SyntheticSpec& spec) {
    require(spec.num_clusters >= 2, "synthetic data needs at least 2 clusters");
    require(spec.per_cluster > 0, "per_cluster must be positive");
    require(spec.dim > 0, "dim must be positive");
    require(spec.center_spread > 0.0 && spec.noise_sigma > 0.0, "center_spread and noise_sigma must be positive");

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> unit(0.0, 1.0);

    Matrix centers(spec.num_clusters, spec.dim);
    for (auto& v : centers.values()) v = spec.center_spread * unit(rng);

    EmbeddingDataset ds;
    ds.dim = spec.dim;
    ds.num_classes = spec.num_clusters;
    const std::size_t n = spec.num_clusters * spec.per_cluster;
    ds.labels.reserve(n);
    ds.embeddings.reserve(n * spec.dim);
    if (spec.with_texts) ds.texts.emplace();
    for (std::uint32_t c = 0; c < spec.num_clusters; ++c) {
        for (std::size_t k = 0; k < spec.per_cluster; ++k) {
            ds.labels.push_back(c);
            for (std::size_t j = 0; j < spec.dim; ++j) {
                ds.embeddings.push_back(static_cast<float>(centers(c, j) + spec.noise_sigma * unit(rng)));
            }
            if (spec.with_texts) ds.texts->push_back("cluster " + std::to_string(c) + " sample " + std::to_string(k));
        }
    }
    return ds;
}

SplitResult split(const EmbeddingDataset& ds, double test_fraction, std::uint64_t seed) {
    validate(ds);
    require(test_fraction > 0.0 && test_fraction < 1.0, "test fraction must lie in (0, 1)");

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.count(); ++i) by_class[ds.labels[i]].push_back(i);

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
        test_idx.insert(test_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
        train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
    }
    if (train_idx.empty() || test_idx.empty()) {
        fail(ErrorKind::invalid_argument, "test fraction " + std::to_string(test_fraction) + " leaves an empty partition");
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {select_rows(ds, train_idx), select_rows(ds, test_idx)};
}

}  // namespace gaproto
