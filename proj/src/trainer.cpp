#include "kbgsat/trainer.hpp"

#include "json.hpp"

namespace kbgsat {

std::string history_json(std::span<const EpochRecord> history) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& h : history)
        j.push_back({{"epoch", h.epoch}, {"loss", h.loss}, {"valid_mrr", h.valid_mrr}, {"improved", h.improved}});
    return j.dump(2);
}

}  // namespace kbgsat
