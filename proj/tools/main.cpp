#include "cli_app.hpp"

int main(int argc, char** argv) { return multiverse::cli::run(argc, argv); }
