#include "cli_app.hpp"
#include <iostream>
namespace multiverse::cli {
int run(int, char**) { return 2; }
int run(const std::vector<std::string>&, std::ostream&, std::ostream&) { return 2; }
}
