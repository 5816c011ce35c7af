#include "bner/io.hpp"

#include "bner/errors.hpp"
#include "bner/format.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>

namespace bner {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
    std::string out = s.substr(b, e - b);
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
    return out;
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path, 0, "cannot open file");
    return in;
}

// Reads the next non-blank line; `line_no` tracks the 1-based physical line.
bool next_row(std::istream& in, std::vector<std::string>& fields, std::size_t& line_no) {
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        fields = split_csv_line(line);
        return true;
    }
    return false;
}

// Column roles of a header made of an id column, x1_* / x2_* covariates and
// optionally a pair of response columns.
struct Header {
    std::vector<std::size_t> x1, x2;
    std::vector<std::string> x1_names, x2_names;
    std::map<std::string, std::size_t> named;
    std::size_t width = 0;
};

Header parse_header(const std::vector<std::string>& fields, const std::string& source, std::size_t line,
                    const std::string& id_column, const std::set<std::string>& extra) {
    if (fields.empty() || fields[0] != id_column) {
        throw DataError(source, line, "header must start with '" + id_column + "'");
    }
    Header h;
    h.width = fields.size();
    for (std::size_t c = 1; c < fields.size(); ++c) {
        const std::string& f = fields[c];
        if (f.rfind("x1_", 0) == 0) {
            h.x1.push_back(c);
            h.x1_names.push_back(f);
        } else if (f.rfind("x2_", 0) == 0) {
            h.x2.push_back(c);
            h.x2_names.push_back(f);
        } else if (extra.count(f) && !h.named.count(f)) {
            h.named[f] = c;
        } else {
            throw DataError(source, line, "unexpected column '" + f + "'");
        }
    }
    if (h.x1.empty() || h.x2.empty()) {
        throw DataError(source, line, "header needs at least one x1_* and one x2_* column");
    }
    return h;
}

double numeric(const std::vector<std::string>& fields, std::size_t c, const std::string& column,
               const std::string& source, std::size_t line) {
    const auto v = parse_double(fields[c]);
    if (!v) throw DataError(source, line, "column '" + column + "': '" + fields[c] + "' is not a finite number");
    return *v;
}

Eigen::VectorXd covariates(const std::vector<std::string>& fields, const std::vector<std::size_t>& cols,
                           const std::vector<std::string>& names, const std::string& source, std::size_t line) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) x[static_cast<Eigen::Index>(i)] = numeric(fields, cols[i], names[i], source, line);
    return x;
}

void check_width(const std::vector<std::string>& fields, std::size_t width, const std::string& source,
                 std::size_t line) {
    if (fields.size() != width) {
        throw DataError(source, line, "expected " + std::to_string(width) + " fields, found " + std::to_string(fields.size()));
    }
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::optional<double> parse_double(const std::string& field) {
    if (field.empty()) return std::nullopt;
    const char* first = field.data();
    const char* last = first + field.size();
    if (*first == '+') ++first;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
    return v;
}

SampleData load_unit_csv(const std::string& path, const Transform& transform) {
    auto in = open_input(path);
    return read_unit_csv(in, path, transform);
}

SampleData read_unit_csv(std::istream& in, const std::string& source, const Transform& transform) {
    std::vector<std::string> fields;
    std::size_t line = 0;
    if (!next_row(in, fields, line)) throw DataError(source, 0, "file is empty");
    const Header h = parse_header(fields, source, line, "domain_id", {"z1", "z2", "y1", "y2"});
    const bool z_mode = h.named.count("z1") && h.named.count("z2");
    const bool y_mode = h.named.count("y1") && h.named.count("y2");
    if (z_mode == y_mode || h.named.size() != 2) {
        throw DataError(source, line, "header must contain exactly one response pair: (z1, z2) or (y1, y2)");
    }
    const std::size_t r1 = h.named.at(z_mode ? "z1" : "y1");
    const std::size_t r2 = h.named.at(z_mode ? "z2" : "y2");

    std::vector<UnitRecord> records;
    while (next_row(in, fields, line)) {
        check_width(fields, h.width, source, line);
        UnitRecord r;
        r.domain_id = fields[0];
        if (r.domain_id.empty()) throw DataError(source, line, "empty domain_id");
        r.x1 = covariates(fields, h.x1, h.x1_names, source, line);
        r.x2 = covariates(fields, h.x2, h.x2_names, source, line);
        Vec2 v(numeric(fields, r1, z_mode ? "z1" : "y1", source, line),
               numeric(fields, r2, z_mode ? "z2" : "y2", source, line));
        if (z_mode) {
            try {
                v = transform.forward(v);
            } catch (const std::exception& e) {
                throw DataError(source, line, std::string("cannot transform (z1, z2): ") + e.what());
            }
            if (!std::isfinite(v[0]) || !std::isfinite(v[1])) {
                throw DataError(source, line, "transformed response is not finite");
            }
        }
        r.y1 = v[0];
        r.y2 = v[1];
        records.push_back(std::move(r));
    }
    if (records.empty()) throw DataError(source, line, "no data rows");
    SampleData s = SampleData::from_records(h.x1.size(), h.x2.size(), records);
    s.x1_names = h.x1_names;
    s.x2_names = h.x2_names;
    return s;
}

void write_unit_csv(std::ostream& out, const SampleData& sample) {
    out << "domain_id";
    for (std::size_t i = 0; i < sample.p1(); ++i)
        out << ',' << (i < sample.x1_names.size() ? sample.x1_names[i] : "x1_" + std::to_string(i + 1));
    for (std::size_t i = 0; i < sample.p2(); ++i)
        out << ',' << (i < sample.x2_names.size() ? sample.x2_names[i] : "x2_" + std::to_string(i + 1));
    out << ",y1,y2\n";
    for (const auto& dom : sample.domains()) {
        for (const auto& u : dom.units) {
            out << u.domain_id;
            for (Eigen::Index i = 0; i < u.x1.size(); ++i) out << ',' << format_number(u.x1[i]);
            for (Eigen::Index i = 0; i < u.x2.size(); ++i) out << ',' << format_number(u.x2[i]);
            out << ',' << format_number(u.y1) << ',' << format_number(u.y2) << '\n';
        }
    }
}

std::vector<CovariatePattern> load_patterns_csv(const std::string& path) {
    auto in = open_input(path);
    return read_patterns_csv(in, path);
}

std::vector<CovariatePattern> read_patterns_csv(std::istream& in, const std::string& source) {
    std::vector<std::string> fields;
    std::size_t line = 0;
    if (!next_row(in, fields, line)) throw DataError(source, 0, "file is empty");
    const Header h = parse_header(fields, source, line, "pattern_id", {});
    std::vector<CovariatePattern> out;
    std::set<std::string> seen;
    while (next_row(in, fields, line)) {
        check_width(fields, h.width, source, line);
        if (fields[0].empty()) throw DataError(source, line, "empty pattern_id");
        if (!seen.insert(fields[0]).second) throw DataError(source, line, "duplicate pattern_id '" + fields[0] + "'");
        out.push_back({fields[0], covariates(fields, h.x1, h.x1_names, source, line),
                       covariates(fields, h.x2, h.x2_names, source, line)});
        for (std::size_t t = 0; t + 1 < out.size(); ++t) {
            if (out[t].x1 == out.back().x1 && out[t].x2 == out.back().x2) {
                throw DataError(source, line, "pattern '" + fields[0] + "' repeats the covariates of '" + out[t].id + "'");
            }
        }
    }
    if (out.empty()) throw DataError(source, line, "no patterns");
    return out;
}

AuxCounts load_aux_csv(const std::string& aux_path, const std::vector<CovariatePattern>& patterns) {
    auto in = open_input(aux_path);
    return read_aux_csv(in, aux_path, patterns);
}

AuxCounts read_aux_csv(std::istream& in, const std::string& source, const std::vector<CovariatePattern>& patterns) {
    std::map<std::string, std::size_t> pattern_index;
    for (std::size_t t = 0; t < patterns.size(); ++t) pattern_index[patterns[t].id] = t;

    std::vector<std::string> fields;
    std::size_t line = 0;
    if (!next_row(in, fields, line)) throw DataError(source, 0, "file is empty");
    if (fields != std::vector<std::string>{"domain_id", "pattern_id", "N_dt"}) {
        throw DataError(source, line, "header must be 'domain_id,pattern_id,N_dt'");
    }
    std::vector<std::string> ids;
    std::map<std::string, std::size_t> dindex;
    std::vector<std::vector<std::int64_t>> counts;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (next_row(in, fields, line)) {
        check_width(fields, 3, source, line);
        if (fields[0].empty()) throw DataError(source, line, "empty domain_id");
        auto pit = pattern_index.find(fields[1]);
        if (pit == pattern_index.end()) throw DataError(source, line, "unknown pattern_id '" + fields[1] + "'");
        const double v = numeric(fields, 2, "N_dt", source, line);
        if (v < 0.0 || v != std::floor(v) || v > 9.0e15) {
            throw DataError(source, line, "N_dt must be a non-negative integer, got '" + fields[2] + "'");
        }
        auto dit = dindex.find(fields[0]);
        if (dit == dindex.end()) {
            dit = dindex.emplace(fields[0], ids.size()).first;
            ids.push_back(fields[0]);
            counts.emplace_back(patterns.size(), 0);
        }
        if (!seen.insert({dit->second, pit->second}).second) {
            throw DataError(source, line, "duplicate row for domain '" + fields[0] + "' and pattern '" + fields[1] + "'");
        }
        counts[dit->second][pit->second] = static_cast<std::int64_t>(v);
    }
    if (ids.empty()) throw DataError(source, line, "no count rows");
    try {
        return AuxCounts(patterns, std::move(ids), std::move(counts));
    } catch (const std::exception& e) {
        throw DataError(source, 0, e.what());
    }
}

SampleData align_sample_with_aux(const SampleData& sample, const AuxCounts& aux) {
    for (const auto& dom : sample.domains()) {
        if (!aux.find_domain(dom.id)) {
            throw ConsistencyError("domain '" + dom.id + "' has sampled units but no auxiliary counts");
        }
    }
    SampleData aligned = sample.with_domains(aux.domain_ids());
    build_layout(aligned, aux);
    return aligned;
}

AuxCounts load_population_csv(const std::string& path) {
    auto in = open_input(path);
    return read_population_csv(in, path);
}

AuxCounts read_population_csv(std::istream& in, const std::string& source) {
    std::vector<std::string> fields;
    std::size_t line = 0;
    if (!next_row(in, fields, line)) throw DataError(source, 0, "file is empty");
    const Header h = parse_header(fields, source, line, "domain_id", {});
    std::vector<UnitRecord> units;
    while (next_row(in, fields, line)) {
        check_width(fields, h.width, source, line);
        if (fields[0].empty()) throw DataError(source, line, "empty domain_id");
        UnitRecord r;
        r.domain_id = fields[0];
        r.x1 = covariates(fields, h.x1, h.x1_names, source, line);
        r.x2 = covariates(fields, h.x2, h.x2_names, source, line);
        units.push_back(std::move(r));
    }
    if (units.empty()) throw DataError(source, line, "no population rows");
    return AuxCounts::from_population(units);
}

}  // namespace bner
