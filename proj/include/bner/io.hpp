#pragma once

// CSV ingestion and serialization.
//
// Unit file:     domain_id, x1_*..., x2_*..., then (z1, z2) or (y1, y2)
// Aux file:      domain_id, pattern_id, N_dt
// Pattern file:  pattern_id, x1_*..., x2_*...
// Population:    domain_id, x1_*..., x2_*...   (one row per population unit)

#include "bner/model.hpp"
#include "bner/transform.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace bner {

/// Splits one CSV line on commas; surrounding blanks and double quotes are stripped.
std::vector<std::string> split_csv_line(const std::string& line);

/// Parses a finite double; nullopt on any trailing garbage.
std::optional<double> parse_double(const std::string& field);

/// Reads a unit-level sample. z columns are mapped to y = g(z) with `transform`;
/// y columns are taken as already transformed. Throws DataError with the line
/// number on malformed rows.
SampleData load_unit_csv(const std::string& path, const Transform& transform);
SampleData read_unit_csv(std::istream& in, const std::string& source, const Transform& transform);

/// Writes the y-scale sample (columns y1, y2) with 17 significant digits.
void write_unit_csv(std::ostream& out, const SampleData& sample);

std::vector<CovariatePattern> load_patterns_csv(const std::string& path);
std::vector<CovariatePattern> read_patterns_csv(std::istream& in, const std::string& source);

/// Reads aux counts against the pattern table. Pairs (d, t) that do not appear
/// have N_dt = 0. Throws DataError for unknown pattern ids or duplicate rows.
AuxCounts load_aux_csv(const std::string& aux_path, const std::vector<CovariatePattern>& patterns);
AuxCounts read_aux_csv(std::istream& in, const std::string& source, const std::vector<CovariatePattern>& patterns);

/// Registers aux-only domains in the sample (as n_d = 0 domains) and checks
/// the sample against the counts; throws ConsistencyError naming the culprit.
SampleData align_sample_with_aux(const SampleData& sample, const AuxCounts& aux);

/// Full population covariate listing, tabulated into patterns and counts.
AuxCounts load_population_csv(const std::string& path);
AuxCounts read_population_csv(std::istream& in, const std::string& source);

}  // namespace bner
