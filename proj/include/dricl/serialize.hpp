#pragma once

// JSON conversions for the engine's record types (nlohmann ADL hooks).

#include <json.hpp>

#include "dricl/trainer.hpp"

namespace dricl {

void to_json(nlohmann::json& j, const ModelDims& d);
void from_json(const nlohmann::json& j, ModelDims& d);

void to_json(nlohmann::json& j, const DrIclConfig& c);
void from_json(const nlohmann::json& j, DrIclConfig& c);

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const AdvantageRecord& r);
void from_json(const nlohmann::json& j, AdvantageRecord& r);

void to_json(nlohmann::json& j, const StepLog& s);
void from_json(const nlohmann::json& j, StepLog& s);

void to_json(nlohmann::json& j, const EpochSummary& e);
void from_json(const nlohmann::json& j, EpochSummary& e);

}  // namespace dricl
