#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace stq {

// One observation row: planar coordinates, time stamp, value, optional covariates.
struct Observation {
    double s1 = 0.0;
    double s2 = 0.0;
    double t = 0.0;
    double z = 0.0;
    std::vector<double> covariates;
};

// Irregular station observations. Covariate count is uniform across rows.
class SpaceTimeDataset {
public:
    SpaceTimeDataset() = default;

    explicit SpaceTimeDataset(std::vector<Observation> rows) : rows_(std::move(rows)) {
        if (!rows_.empty()) {
            n_covariates_ = rows_.front().covariates.size();
            for (const auto& r : rows_) {
                if (r.covariates.size() != n_covariates_)
                    throw std::invalid_argument("inconsistent covariate count across rows");
            }
        }
    }

    const std::vector<Observation>& rows() const { return rows_; }
    std::size_t size() const { return rows_.size(); }
    bool empty() const { return rows_.empty(); }
    std::size_t n_covariates() const { return n_covariates_; }

    void add(Observation obs) {
        if (rows_.empty())
            n_covariates_ = obs.covariates.size();
        else if (obs.covariates.size() != n_covariates_)
            throw std::invalid_argument("covariate count mismatch on append");
        rows_.push_back(std::move(obs));
    }

    double min_z() const { return reduce_z(true); }
    double max_z() const { return reduce_z(false); }
    double z_range() const { return max_z() - min_z(); }

    double mean_z() const {
        if (rows_.empty()) throw std::domain_error("mean_z on empty dataset");
        double s = 0.0;
        for (const auto& r : rows_) s += r.z;
        return s / static_cast<double>(rows_.size());
    }

    double std_z() const {
        if (rows_.size() < 2) return 0.0;
        double m = mean_z(), ss = 0.0;
        for (const auto& r : rows_) ss += (r.z - m) * (r.z - m);
        return std::sqrt(ss / static_cast<double>(rows_.size() - 1));
    }

    // Distinct (s1,s2) stations in first-appearance order.
    std::vector<std::pair<double, double>> stations() const {
        std::vector<std::pair<double, double>> out;
        std::unordered_map<std::string, int> seen;
        for (const auto& r : rows_) {
            auto key = station_key(r.s1, r.s2);
            if (seen.emplace(key, 1).second) out.emplace_back(r.s1, r.s2);
        }
        return out;
    }

    std::vector<double> distinct_times() const {
        std::vector<double> out;
        std::unordered_map<double, int> seen;
        for (const auto& r : rows_) {
            if (seen.emplace(r.t, 1).second) out.push_back(r.t);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    static std::string station_key(double s1, double s2) {
        std::ostringstream os;
        os.precision(17);
        os << s1 << '|' << s2;
        return os.str();
    }

private:
    double reduce_z(bool take_min) const {
        if (rows_.empty()) throw std::domain_error("z range on empty dataset");
        double v = rows_.front().z;
        for (const auto& r : rows_)
            v = take_min ? std::min(v, r.z) : std::max(v, r.z);
        return v;
    }

    std::vector<Observation> rows_;
    std::size_t n_covariates_ = 0;
};

namespace csv {

// Canonical schema: header `s1,s2,t,z[,x1..xp]`, '.' decimal, UTF-8.
// Duplicate (s,t) rows are rejected with their row numbers.
inline SpaceTimeDataset read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty dataset file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header;
    {
        std::stringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, ',')) header.push_back(cell);
    }
    if (header.size() < 4 || header[0] != "s1" || header[1] != "s2" || header[2] != "t" ||
        header[3] != "z")
        throw std::runtime_error("dataset header must start with s1,s2,t,z: " + path);
    const std::size_t n_cov = header.size() - 4;

    std::vector<Observation> rows;
    std::unordered_map<std::string, std::size_t> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ls, cell, ',')) {
            try {
                vals.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw std::runtime_error("row " + std::to_string(line_no) +
                                         ": unparsable number '" + cell + "'");
            }
        }
        if (vals.size() != header.size())
            throw std::runtime_error("row " + std::to_string(line_no) + ": expected " +
                                     std::to_string(header.size()) + " columns, got " +
                                     std::to_string(vals.size()));
        Observation o;
        o.s1 = vals[0];
        o.s2 = vals[1];
        o.t = vals[2];
        o.z = vals[3];
        o.covariates.assign(vals.begin() + 4, vals.end());
        std::ostringstream key;
        key.precision(17);
        key << o.s1 << '|' << o.s2 << '|' << o.t;
        auto [it, fresh] = seen.emplace(key.str(), line_no);
        if (!fresh)
            throw std::runtime_error("duplicate (s,t) at rows " + std::to_string(it->second) +
                                     " and " + std::to_string(line_no));
        rows.push_back(std::move(o));
        (void)n_cov;
    }
    return SpaceTimeDataset(std::move(rows));
}

inline void write_dataset(const SpaceTimeDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path);
    out.precision(17);
    out << "s1,s2,t,z";
    for (std::size_t i = 0; i < ds.n_covariates(); ++i) out << ",x" << (i + 1);
    out << '\n';
    for (const auto& r : ds.rows()) {
        out << r.s1 << ',' << r.s2 << ',' << r.t << ',' << r.z;
        for (double c : r.covariates) out << ',' << c;
        out << '\n';
    }
}

}  // namespace csv
}  // namespace stq
