"""Shipped default templates for simulation-script and controller-code emission.

Both are plain-text templates with ``{{placeholder}}`` markers; deployments
normally ship their own, these defaults keep the toolkit runnable out of the
box and serve as the reference fixtures for emission tests.
"""

DEFAULT_SIM_TEMPLATE = """\
# Auto-generated simulation script. Edit the scenario file, not this output.
import sim_runtime

world = sim_runtime.connect()
world.load_map("{{map}}")
{{weather}}

# Scene setup
{{ego_spawn}}
{{agents}}

world.run()
telemetry = world.collect_telemetry()

# Expected-outcome checks
{{assertions}}
"""

DEFAULT_CONTROL_TEMPLATE = """\
// Auto-generated vehicle controller stub (comAPI invocation style).
#include "comapi.h"

{{signal_declarations}}

void register_subscriptions() {
{{subscriptions}}
}

{{handlers}}
"""
