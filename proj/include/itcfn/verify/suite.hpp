#pragma once

#include <string>
#include <vector>

// Named property checks shared by `itcfn verify` and the acceptance tests.
namespace itcfn::verify {

enum class Mutation {
    None,
    // Flips the sign of the focal loss seen by the identity checks.
    FocalSign,
};

// "" -> None, "focal-sign" -> FocalSign; anything else throws std::invalid_argument.
Mutation mutation_from_name(const std::string& name);

struct Check {
    std::string name;
    std::string group;  // gradient, oracle, identity, format
    bool passed = false;
    std::string detail;
};

std::vector<Check> run_suite(Mutation mutation = Mutation::None);

}  // namespace itcfn::verify
