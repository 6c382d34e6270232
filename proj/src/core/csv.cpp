#include "perceptlab/core/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

namespace perceptlab {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& context) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError("malformed numeric field '" + s + "' in " + context);
    }
}

std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path,
                                                const std::string& expected_header,
                                                size_t ncols) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty manifest: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expected_header)
        throw IoError("manifest " + path.string() + " has header '" + line +
                      "', expected '" + expected_header + "'");
    std::vector<std::vector<std::string>> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = split_line(line);
        if (fields.size() != ncols)
            throw IoError("manifest " + path.string() + " line " + std::to_string(lineno) +
                          ": expected " + std::to_string(ncols) + " fields");
        rows.push_back(std::move(fields));
    }
    return rows;
}

} // namespace

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

std::vector<ScoreRecord> read_score_manifest(const std::filesystem::path& path) {
    std::vector<ScoreRecord> out;
    for (auto& f : read_rows(path, "item_id,raw_score,mos", 3)) {
        ScoreRecord r;
        r.item_id = f[0];
        r.raw_score = parse_double(f[1], path.string());
        if (!std::isfinite(r.raw_score))
            throw IoError("non-finite raw_score for item " + r.item_id + " in " +
                          path.string());
        if (!f[2].empty()) r.mos = parse_double(f[2], path.string());
        out.push_back(std::move(r));
    }
    return out;
}

void write_score_manifest(const std::filesystem::path& path,
                          const std::vector<ScoreRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << "item_id,raw_score,mos\n";
    for (const auto& r : records) {
        out << r.item_id << ',' << format_double(r.raw_score) << ',';
        if (r.mos) out << format_double(*r.mos);
        out << '\n';
    }
}

std::vector<FrManifestRow> read_fr_manifest(const std::filesystem::path& path) {
    std::vector<FrManifestRow> out;
    for (auto& f : read_rows(path, "distorted_path,reference_path,mos", 3))
        out.push_back({f[0], f[1], parse_double(f[2], path.string())});
    return out;
}

void write_fr_manifest(const std::filesystem::path& path,
                       const std::vector<FrManifestRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << "distorted_path,reference_path,mos\n";
    for (const auto& r : rows)
        out << r.distorted_path << ',' << r.reference_path << ',' << format_double(r.mos)
            << '\n';
}

std::vector<NrManifestRow> read_nr_manifest(const std::filesystem::path& path) {
    std::vector<NrManifestRow> out;
    for (auto& f : read_rows(path, "image_path,mos", 2))
        out.push_back({f[0], parse_double(f[1], path.string())});
    return out;
}

void write_nr_manifest(const std::filesystem::path& path,
                       const std::vector<NrManifestRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << "image_path,mos\n";
    for (const auto& r : rows) out << r.image_path << ',' << format_double(r.mos) << '\n';
}

std::vector<EvaluatorScoreRow> read_evaluator_manifest(const std::filesystem::path& path) {
    std::vector<EvaluatorScoreRow> out;
    for (auto& f : read_rows(path, "image_path,evaluator,raw_score", 3))
        out.push_back({f[0], f[1], parse_double(f[2], path.string())});
    return out;
}

} // namespace perceptlab
