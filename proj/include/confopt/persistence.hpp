#pragma once

// JSON persistence of softmax models and mixtures over them. The header
// records (n, q, m) so a dump can be checked against the data it is used on.

#include <memory>

#include "json.hpp"

#include "confopt/oracle.hpp"

namespace confopt {

nlohmann::json model_to_json(const ClassProbabilityModel& model);
std::shared_ptr<const ClassProbabilityModel> model_from_json(const nlohmann::json& j);

/// All members must share one ClassProbabilityModel.
nlohmann::json classifier_to_json(const RandomizedClassifier& h);
RandomizedClassifier classifier_from_json(const nlohmann::json& j);

}  // namespace confopt
