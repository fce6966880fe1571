#ifndef EDGERACE_EXPERIMENTS_HPP
#define EDGERACE_EXPERIMENTS_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgerace/configuration.hpp"
#include "edgerace/increments.hpp"

namespace edgerace {

/// Bad or incomplete experiment configuration (CLI exit code 2).
class SpecError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentInfo {
    std::string name;
    std::string checks;  // one line: what the experiment compares against what
};

/// The seven experiments, in listing order.
const std::vector<ExperimentInfo>& experiment_catalog();

struct LabeledModel {
    std::string label;  // family name, made unique with a suffix when repeated
    IncrementModel model;
};

struct ExperimentSpec {
    std::string name;
    std::vector<LabeledModel> models;
    double s = 1.0;
    std::size_t replicas = 1;
    SampleDepth depth = SampleDepth::particles(1000);
    std::vector<std::size_t> taus;
    std::uint64_t seed = 0;
    std::optional<TailBackend> backend;
    /// Defaults for the experiment merged with the config's overrides.
    std::map<std::string, double> tolerances;
    std::filesystem::path output;
    /// Experiment-specific keys, kept verbatim.
    nlohmann::json params = nlohmann::json::object();
};

/// Parses and validates a JSON config (comments allowed). Throws SpecError on
/// unknown experiments, unknown keys or tolerance names, missing seed, or
/// values out of range.
ExperimentSpec parse_spec(const std::string& text);
ExperimentSpec load_spec(const std::filesystem::path& path);

struct MetricRow {
    std::string metric;
    double value = 0.0;
    double reference = 0.0;  // target or threshold the value is compared with
    double tolerance = 0.0;
    bool pass = false;
};

struct DataFile {
    std::string name;      // file name inside the output directory
    std::string contents;  // CSV text
};

struct ExperimentReport {
    std::string experiment;
    std::uint64_t seed = 0;
    std::string backend;
    std::vector<std::pair<std::string, std::string>> inputs;
    std::map<std::string, double> tolerances;
    std::vector<MetricRow> rows;
    std::vector<DataFile> data;

    /// Conjunction of the pass flags; true for an empty report.
    bool verdict() const;
};

/// Runs the named experiment. Replicas are spread over `threads` workers and
/// every replica draws from its own substream of the spec seed, so the report
/// is identical for any thread count.
ExperimentReport run(const ExperimentSpec& spec, std::size_t threads);

/// report.csv, the data files and manifest.csv, each written atomically.
/// Creates the directory if needed.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

std::string report_csv(const ExperimentReport& report);
std::string manifest_csv(const ExperimentReport& report);

} // namespace edgerace

#endif
