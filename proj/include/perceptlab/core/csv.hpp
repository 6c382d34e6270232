#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "perceptlab/core/types.hpp"

namespace perceptlab {

// CSV manifests: UTF-8, LF line endings, fixed headers, no quoting
// (paths must not contain commas).

// header: item_id,raw_score,mos  (mos blank if absent)
std::vector<ScoreRecord> read_score_manifest(const std::filesystem::path& path);
void write_score_manifest(const std::filesystem::path& path,
                          const std::vector<ScoreRecord>& records);

// header: distorted_path,reference_path,mos
struct FrManifestRow {
    std::string distorted_path;
    std::string reference_path;
    double mos = 0.0;
};
std::vector<FrManifestRow> read_fr_manifest(const std::filesystem::path& path);
void write_fr_manifest(const std::filesystem::path& path,
                       const std::vector<FrManifestRow>& rows);

// header: image_path,mos
struct NrManifestRow {
    std::string image_path;
    double mos = 0.0;
};
std::vector<NrManifestRow> read_nr_manifest(const std::filesystem::path& path);
void write_nr_manifest(const std::filesystem::path& path,
                       const std::vector<NrManifestRow>& rows);

// header: image_path,evaluator,raw_score
struct EvaluatorScoreRow {
    std::string image_path;
    std::string evaluator;
    double raw_score = 0.0;
};
std::vector<EvaluatorScoreRow> read_evaluator_manifest(const std::filesystem::path& path);

// shared formatting helper: shortest round-trip double representation
std::string format_double(double v);

} // namespace perceptlab
