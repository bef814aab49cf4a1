#pragma once

#include <string>

// Built in double precision; fills `detail` with the worst entry.
bool acceptance_gradients(std::string& detail);
