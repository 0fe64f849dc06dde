#include "notifdt/cli/commands.hpp"

int main(int argc, char** argv) { return notifdt::cli::run(argc, argv); }
