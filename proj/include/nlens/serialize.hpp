#pragma once

#include "nlens/analysis.hpp"
#include "nlens/probe.hpp"
#include "nlens/ranking.hpp"
#include "nlens/redundancy.hpp"
#include "nlens/synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace nlens {

using Json = nlohmann::json;

Json to_json(const ProbeConfig& config);
ProbeConfig probe_config_from_json(const Json& j, ProbeConfig base = {});

Json to_json(const Metrics& metrics, const std::vector<std::string>& labels);
Json to_json(const StandardizationStats& stats);

Json to_json(const AnalysisReport& report);
AnalysisReport report_from_json(const Json& j);
Json reports_to_json(const std::vector<AnalysisReport>& reports);
std::vector<AnalysisReport> reports_from_json(const Json& j);

// ranking.json: {method, labels, hidden_size, global: [{id, layer, offset, score}], per_class: {label: [...]}}
Json to_json(const NeuronRanking& ranking);
NeuronRanking ranking_from_json(const Json& j);

Json to_json(const ClusterModel& model, int hidden_size);
Json to_json(const CkaMap& map);
Json to_json(const ControlTask& task);
ControlTask control_task_from_json(const Json& j);

Json to_json(const synth::SynthSpec& spec);
synth::SynthSpec synth_spec_from_json(const Json& j, synth::SynthSpec base = {});
Json to_json(const synth::GroundTruth& truth);
synth::GroundTruth ground_truth_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace nlens
