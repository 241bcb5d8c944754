#include "decode/trialset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "decode/btf.hpp"

namespace decode {

Tensor TrialSet::trial(size_t i) const {
    const size_t T = n_samples(), d = n_channels();
    Tensor out({T, d});
    std::copy(data.data.begin() + i * T * d, data.data.begin() + (i + 1) * T * d,
              out.data.begin());
    return out;
}

void TrialSet::set_trial(size_t i, const Tensor& t) {
    const size_t T = n_samples(), d = n_channels();
    if (t.shape != std::vector<size_t>{T, d})
        throw std::invalid_argument("set_trial: expected " + shape_str({T, d}) + ", got " +
                                    shape_str(t.shape));
    std::copy(t.data.begin(), t.data.end(), data.data.begin() + i * T * d);
}

void TrialSet::validate() const {
    if (data.ndim() != 3) throw std::invalid_argument("trial set: data must be [N x T x d]");
    const size_t N = n_trials(), T = n_samples(), d = n_channels();
    if (labels.size() != N || marker.size() != N)
        throw std::invalid_argument("trial set: labels/markers must match the trial count");
    if (!channel_names.empty() && channel_names.size() != d)
        throw std::invalid_argument("trial set: channel name count does not match channels");
    if (rate_hz <= 0) throw std::invalid_argument("trial set: sampling rate must be positive");
    for (size_t m : marker)
        if (m >= T)
            throw std::invalid_argument("trial set: marker index " + std::to_string(m) +
                                        " outside [0, " + std::to_string(T) + ")");
    for (double v : data.data)
        if (!std::isfinite(v)) throw std::invalid_argument("trial set: non-finite sample");
}

void save_trialset(const TrialSet& ts, const std::string& stem) {
    ts.validate();
    write_btf(stem + ".btf", ts.data);
    std::ofstream csv(stem + ".labels.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("save_trialset: cannot open " + stem + ".labels.csv");
    csv << "rate_hz=" << ts.rate_hz;
    for (const auto& c : ts.channel_names) csv << "," << c;
    csv << "\n";
    for (size_t i = 0; i < ts.n_trials(); ++i)
        csv << ts.labels[i] << "," << ts.marker[i] << "\n";
    if (!csv) throw std::runtime_error("save_trialset: write failed");
}

TrialSet load_trialset(const std::string& stem) {
    TrialSet ts;
    ts.data = read_btf(stem + ".btf");
    std::ifstream csv(stem + ".labels.csv");
    if (!csv) throw std::runtime_error("load_trialset: cannot open " + stem + ".labels.csv");
    std::string line;
    if (!std::getline(csv, line)) throw std::runtime_error("load_trialset: empty labels file");
    {
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        if (field.rfind("rate_hz=", 0) != 0)
            throw std::runtime_error("load_trialset: malformed header line");
        ts.rate_hz = std::stod(field.substr(8));
        while (std::getline(ss, field, ',')) ts.channel_names.push_back(field);
    }
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        auto comma = line.rfind(',');
        if (comma == std::string::npos)
            throw std::runtime_error("load_trialset: malformed trial row: " + line);
        ts.labels.push_back(line.substr(0, comma));
        ts.marker.push_back(static_cast<size_t>(std::stoull(line.substr(comma + 1))));
    }
    ts.validate();
    return ts;
}

Tensor read_trial_csv(const std::string& path, size_t* marker, double* rate,
                      std::vector<std::string>* channel_names) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_trial_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_trial_csv: empty file");
    std::vector<std::string> names;
    {
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) names.push_back(field);
    }
    if (!std::getline(in, line) || line.rfind("# marker=", 0) != 0)
        throw std::runtime_error("read_trial_csv: expected metadata line '# marker=<i> rate=<hz>'");
    size_t m = 0;
    double r = 0;
    if (std::sscanf(line.c_str(), "# marker=%zu rate=%lf", &m, &r) != 2)
        throw std::runtime_error("read_trial_csv: malformed metadata line");
    std::vector<double> values;
    size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        size_t cols = 0;
        while (std::getline(ss, field, ',')) {
            values.push_back(std::stod(field));
            ++cols;
        }
        if (cols != names.size())
            throw std::runtime_error("read_trial_csv: row " + std::to_string(rows) + " has " +
                                     std::to_string(cols) + " fields, expected " +
                                     std::to_string(names.size()));
        ++rows;
    }
    if (marker) *marker = m;
    if (rate) *rate = r;
    if (channel_names) *channel_names = names;
    return Tensor({rows, names.size()}, std::move(values));
}

}  // namespace decode
