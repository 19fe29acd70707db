#include "flatmin/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "flatmin/error.hpp"
#include "flatmin/model.hpp"
#include "flatmin/rng.hpp"

namespace flatmin {

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path, std::size_t offset) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in)
        throw ParseError(path + ": truncated header at byte " + std::to_string(offset));
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw ParseError("cannot open IDX image file: " + images_path);
    const std::uint32_t img_magic = read_be32(img, images_path, 0);
    if (img_magic != 0x00000803u)
        throw ParseError(images_path + ": bad image magic at byte 0 (got 0x" +
                         [&] { char b[16]; std::snprintf(b, sizeof(b), "%08x", img_magic); return std::string(b); }() +
                         ", want 0x00000803)");
    const std::uint32_t n = read_be32(img, images_path, 4);
    const std::uint32_t rows = read_be32(img, images_path, 8);
    const std::uint32_t cols = read_be32(img, images_path, 12);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw ParseError("cannot open IDX label file: " + labels_path);
    const std::uint32_t lab_magic = read_be32(lab, labels_path, 0);
    if (lab_magic != 0x00000801u)
        throw ParseError(labels_path + ": bad label magic at byte 0");
    const std::uint32_t n_lab = read_be32(lab, labels_path, 4);
    if (n_lab != n)
        throw ParseError(labels_path + ": label count " + std::to_string(n_lab) +
                         " does not match image count " + std::to_string(n));

    Dataset ds;
    ds.inputs = Matrix(n, static_cast<std::size_t>(rows) * cols);
    ds.labels.resize(n);
    std::vector<unsigned char> pix(static_cast<std::size_t>(rows) * cols);
    for (std::uint32_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
        if (!img)
            throw ParseError(images_path + ": truncated pixel data at byte " +
                             std::to_string(16 + static_cast<std::size_t>(i) * pix.size()));
        double* row = ds.inputs.data.data() + static_cast<std::size_t>(i) * pix.size();
        for (std::size_t p = 0; p < pix.size(); ++p) row[p] = pix[p] / 255.0;
        char c;
        lab.read(&c, 1);
        if (!lab)
            throw ParseError(labels_path + ": truncated label data at byte " +
                             std::to_string(8 + i));
        ds.labels[i] = static_cast<unsigned char>(c);
    }
    ds.num_classes =
        static_cast<std::size_t>(*std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
    ds.provenance.source = "idx:" + images_path;
    return ds;
}

namespace {

bool parse_double(const std::string& tok, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(tok, &pos);
        return pos == tok.size();
    } catch (...) {
        return false;
    }
}

}  // namespace

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open CSV: " + path);
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    std::vector<double> row;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        row.clear();
        std::stringstream ss(line);
        std::string tok;
        bool numeric = true;
        while (std::getline(ss, tok, ',')) {
            double v;
            if (!parse_double(tok, v)) {
                numeric = false;
                break;
            }
            row.push_back(v);
        }
        if (!numeric) {
            if (line_no == 1) continue;  // header row
            throw ParseError(path + ": non-numeric field at line " + std::to_string(line_no));
        }
        if (row.size() < 2)
            throw ParseError(path + ": need at least one feature and a label at line " +
                             std::to_string(line_no));
        if (width == 0) width = row.size();
        if (row.size() != width)
            throw ParseError(path + ": ragged row at line " + std::to_string(line_no) + " (" +
                             std::to_string(row.size()) + " fields, expected " +
                             std::to_string(width) + ")");
        const double label = row.back();
        if (label < 0.0 || label != std::floor(label))
            throw ParseError(path + ": label out of range at line " + std::to_string(line_no));
        ds.labels.push_back(static_cast<int>(label));
        ds.inputs.data.insert(ds.inputs.data.end(), row.begin(), row.end() - 1);
    }
    if (ds.labels.empty()) throw ParseError(path + ": no data rows");
    ds.inputs.rows = ds.labels.size();
    ds.inputs.cols = width - 1;
    ds.num_classes =
        static_cast<std::size_t>(*std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
    ds.provenance.source = "csv:" + path;
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open CSV for writing: " + path);
    char buf[40];
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (std::size_t c = 0; c < ds.inputs.cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.inputs.at(r, c));
            out << buf << ',';
        }
        out << ds.labels[r] << '\n';
    }
}

SyntheticKind synthetic_from_string(const std::string& name) {
    if (name == "blobs") return SyntheticKind::blobs;
    if (name == "moons") return SyntheticKind::moons;
    if (name == "spirals") return SyntheticKind::spirals;
    throw ConfigError("unknown synthetic dataset kind '" + name + "'");
}

Dataset make_synthetic(SyntheticKind kind, std::size_t n, std::size_t d, std::size_t C,
                       std::uint64_t seed) {
    if (n < 1 || C < 1) throw ConfigError("synthetic dataset needs n >= 1 and C >= 1");
    if (kind != SyntheticKind::blobs && (d != 2 || C != 2))
        throw ConfigError("moons/spirals are 2-D two-class generators");
    Dataset ds;
    ds.inputs = Matrix(n, d);
    ds.labels.resize(n);
    ds.num_classes = C;
    ds.provenance.seed = seed;
    rng::Stream stream = rng::substream(seed, {0xda7aULL});

    switch (kind) {
        case SyntheticKind::blobs: {
            ds.provenance.source = "synthetic:blobs";
            // centers evenly spread (circle for d >= 2, line for d = 1) so
            // class separation does not ride on the seed; unit scatter
            Matrix centers(C, d, 0.0);
            for (std::size_t c = 0; c < C; ++c) {
                if (d == 1) {
                    centers.at(c, 0) = 6.0 * static_cast<double>(c) -
                                       3.0 * static_cast<double>(C - 1);
                } else {
                    const double angle = 6.283185307179586 * static_cast<double>(c) /
                                         static_cast<double>(C);
                    centers.at(c, 0) = 4.0 * std::cos(angle);
                    centers.at(c, 1) = 4.0 * std::sin(angle);
                }
            }
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t c = i % C;
                ds.labels[i] = static_cast<int>(c);
                for (std::size_t j = 0; j < d; ++j)
                    ds.inputs.at(i, j) = centers.at(c, j) + stream.normal();
            }
            break;
        }
        case SyntheticKind::moons: {
            ds.provenance.source = "synthetic:moons";
            for (std::size_t i = 0; i < n; ++i) {
                const int c = static_cast<int>(i % 2);
                const double t = 3.14159265358979323846 * stream.uniform();
                double x = std::cos(t), y = std::sin(t);
                if (c == 1) {
                    x = 1.0 - x;
                    y = 0.5 - y;
                }
                ds.labels[i] = c;
                ds.inputs.at(i, 0) = x + 0.1 * stream.normal();
                ds.inputs.at(i, 1) = y + 0.1 * stream.normal();
            }
            break;
        }
        case SyntheticKind::spirals: {
            ds.provenance.source = "synthetic:spirals";
            for (std::size_t i = 0; i < n; ++i) {
                const int c = static_cast<int>(i % 2);
                const double t = stream.uniform();
                const double r = 0.2 + 2.0 * t;
                const double phi =
                    3.0 * 3.14159265358979323846 * t + (c == 1 ? 3.14159265358979323846 : 0.0);
                ds.labels[i] = c;
                ds.inputs.at(i, 0) = r * std::cos(phi) + 0.05 * stream.normal();
                ds.inputs.at(i, 1) = r * std::sin(phi) + 0.05 * stream.normal();
            }
            break;
        }
    }
    return ds;
}

Dataset inject_label_noise(const Dataset& ds, double alpha, std::uint64_t seed) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("flip probability must be in [0, 1]");
    if (ds.num_classes < 2) throw ConfigError("cannot flip labels with a single class");
    Dataset out = ds;
    for (std::size_t i = 0; i < out.size(); ++i) {
        rng::Stream stream = rng::substream(seed, {0xf11bULL, i});
        if (stream.uniform() < alpha) {
            // uniform over the other classes
            const std::uint64_t shift = 1 + stream.uniform_index(ds.num_classes - 1);
            out.labels[i] =
                static_cast<int>((static_cast<std::uint64_t>(out.labels[i]) + shift) %
                                 ds.num_classes);
        }
    }
    out.provenance.label_noise_alpha = alpha;
    out.provenance.seed = seed;
    return out;
}

Dataset inject_data_noise(const Dataset& ds, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw ConfigError("data noise sigma must be >= 0");
    Dataset out = ds;
    rng::Stream stream = rng::substream(seed, {0xda7a2ULL});
    if (sigma > 0.0)
        for (double& v : out.inputs.data) v += sigma * stream.normal();
    out.provenance.data_noise_sigma = sigma;
    out.provenance.seed = seed;
    return out;
}

Batch full_batch(const Dataset& ds) {
    return {ds.inputs, ds.labels};
}

Batch take_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
    Batch b;
    b.inputs = Matrix(indices.size(), ds.inputs.cols);
    b.labels.resize(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        std::copy(ds.inputs.row(indices[r]).begin(), ds.inputs.row(indices[r]).end(),
                  b.inputs.row(r).begin());
        b.labels[r] = ds.labels[indices[r]];
    }
    return b;
}

double error_rate(const Model& model, const ParamVector& params, const Dataset& ds) {
    const Matrix probs = predict_proba(model, params, ds.inputs);
    std::size_t wrong = 0;
    for (std::size_t r = 0; r < probs.rows; ++r) {
        const double* row = probs.data.data() + r * probs.cols;
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.cols; ++c)
            if (row[c] > row[best]) best = c;
        if (static_cast<int>(best) != ds.labels[r]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(probs.rows);
}

}  // namespace flatmin
