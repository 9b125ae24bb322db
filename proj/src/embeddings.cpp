#include "mkd/embeddings.hpp"

#include <filesystem>

#include <json.hpp>

#include "binio.hpp"
#include "mkd/errors.hpp"

namespace mkd {

namespace fs = std::filesystem;
using nlohmann::json;

std::string encode_embedding(const Tensor& m) {
    std::string out = "MKDE";
    out.reserve(16 + 4 * m.size());
    binio::put_u32(out, kEmbeddingVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(m.rows()));
    binio::put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.data()) binio::put_f32(out, static_cast<float>(v));
    return out;
}

Tensor decode_embedding(const std::string& bytes, const std::string& name) {
    binio::Reader rd(bytes, name);
    if (rd.take(4, "magic") != "MKDE") rd.fail("bad magic (expected MKDE)", 0);
    const auto version = rd.u32("version");
    if (version != kEmbeddingVersion) {
        rd.fail("unsupported version " + std::to_string(version), 4);
    }
    const auto rows = rd.u32("rows");
    const auto cols = rd.u32("cols");
    if (rows == 0) rd.fail("zero rows", 8);
    if (cols == 0) rd.fail("zero columns", 12);
    const std::uint64_t count = std::uint64_t{rows} * cols;
    if ((bytes.size() - rd.offset()) / 4 < count) {
        rd.fail("truncated: header declares " + std::to_string(count) + " values but only " +
                    std::to_string((bytes.size() - rd.offset()) / 4) + " follow",
                rd.offset() + ((bytes.size() - rd.offset()) / 4) * 4);
    }
    std::vector<double> values(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto at = rd.offset();
        const float f = rd.f32("values");
        if (!std::isfinite(f)) rd.fail("non-finite value", at);
        values[i] = static_cast<double>(f);
    }
    if (!rd.at_end()) rd.fail("trailing bytes after payload", rd.offset());
    return Tensor::from(rows, cols, std::move(values));
}

void write_embedding(const std::string& path, const Tensor& m) {
    binio::write_file_atomic(path, encode_embedding(m));
}

Tensor read_embedding(const std::string& path) { return decode_embedding(binio::read_file(path), path); }

namespace {

std::optional<int> read_label(const json& labels, const char* key, const std::string& where) {
    if (!labels.contains(key) || labels.at(key).is_null()) return std::nullopt;
    const auto& v = labels.at(key);
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
        throw IngestError(where + ": label '" + key + "' must be 0, 1 or null");
    }
    return v.get<int>();
}

json label_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

} // namespace

Dataset load_manifest(const std::string& manifest_path) {
    json doc;
    try {
        doc = json::parse(binio::read_file(manifest_path));
    } catch (const json::exception& e) {
        throw IngestError(manifest_path + ": invalid JSON: " + e.what());
    }
    const fs::path base = fs::path(manifest_path).parent_path();
    auto resolve = [&](const std::string& p) {
        const fs::path fp(p);
        return (fp.is_absolute() ? fp : base / fp).string();
    };
    if (!doc.contains("samples") || !doc.at("samples").is_array()) {
        throw IngestError(manifest_path + ": missing 'samples' array");
    }
    Dataset out;
    std::size_t d_in = 0;
    std::size_t n_g = 0, g_cols = 0;
    for (const auto& s : doc.at("samples")) {
        Sample sample;
        try {
            sample.id = s.at("id").get<std::string>();
            const std::string where = manifest_path + " sample '" + sample.id + "'";
            const std::string ppath = resolve(s.at("pathology").get<std::string>());
            sample.pathology = {sample.id, read_embedding(ppath)};
            validate_matrix(sample.pathology.features, ppath);
            if (d_in == 0) d_in = sample.pathology.features.cols();
            if (sample.pathology.features.cols() != d_in) {
                throw IngestError(ppath, 12,
                                  "pathology width " + std::to_string(sample.pathology.features.cols()) +
                                      " differs from cohort width " + std::to_string(d_in));
            }
            if (s.contains("genomic") && !s.at("genomic").is_null()) {
                const std::string gpath = resolve(s.at("genomic").get<std::string>());
                GenomicMatrix gm{sample.id, read_embedding(gpath)};
                validate_matrix(gm.features, gpath);
                if (n_g == 0) {
                    n_g = gm.features.rows();
                    g_cols = gm.features.cols();
                }
                if (gm.features.rows() != n_g || gm.features.cols() != g_cols) {
                    throw IngestError(gpath, 8,
                                      "genomic shape " + gm.features.shape_str() +
                                          " differs from cohort shape (" + std::to_string(n_g) + "x" +
                                          std::to_string(g_cols) + ")");
                }
                sample.genomic = std::move(gm);
            }
            if (s.contains("labels")) {
                const auto& l = s.at("labels");
                sample.labels.er = read_label(l, "er", where);
                sample.labels.pr = read_label(l, "pr", where);
                sample.labels.her2 = read_label(l, "her2", where);
            }
            if (s.contains("survival") && !s.at("survival").is_null()) {
                const auto& sv = s.at("survival");
                sample.survival = Survival{sv.at("time_days").get<double>(), sv.at("event").get<int>()};
            }
        } catch (const json::exception& e) {
            throw IngestError(manifest_path + ": malformed sample entry: " + e.what());
        }
        out.push_back(std::move(sample));
    }
    return out;
}

std::string write_dataset(const std::string& dir, const Dataset& data) {
    fs::create_directories(fs::path(dir) / "embeddings");
    json samples = json::array();
    for (const auto& s : data) {
        json e;
        e["id"] = s.id;
        const std::string ppath = "embeddings/" + s.id + ".path.mkde";
        write_embedding((fs::path(dir) / ppath).string(), s.pathology.features);
        e["pathology"] = ppath;
        if (s.genomic) {
            const std::string gpath = "embeddings/" + s.id + ".gene.mkde";
            write_embedding((fs::path(dir) / gpath).string(), s.genomic->features);
            e["genomic"] = gpath;
        } else {
            e["genomic"] = nullptr;
        }
        e["labels"] = {{"er", label_json(s.labels.er)},
                       {"pr", label_json(s.labels.pr)},
                       {"her2", label_json(s.labels.her2)}};
        if (s.survival) {
            e["survival"] = {{"time_days", s.survival->time_days}, {"event", s.survival->event}};
        }
        samples.push_back(e);
    }
    json doc;
    doc["format"] = "mkd-manifest";
    doc["version"] = 1;
    doc["samples"] = samples;
    const std::string path = (fs::path(dir) / "manifest.json").string();
    binio::write_file_atomic(path, doc.dump(2) + "\n");
    return path;
}

} // namespace mkd
