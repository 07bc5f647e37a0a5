"""
API Server Launcher
Starts the unit-root marked process service with settings from backend.config
"""

import argparse
import os
import sys

# Add project root to Python path
project_root = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, project_root)

from backend.config import Config


def parse_args(argv=None) -> argparse.Namespace:
    """Host, port and reload, defaulting to API_HOST, API_PORT and ENVIRONMENT."""
    parser = argparse.ArgumentParser(description='Unit-root marked process API server')
    parser.add_argument('--host', type=str, default=Config.API_HOST, help='Interface to bind')
    parser.add_argument('--port', type=int, default=Config.API_PORT, help='Port to bind')
    parser.add_argument('--reload', action=argparse.BooleanOptionalAction,
                        default=Config.ENVIRONMENT == "development",
                        help='Auto-reload on code changes (default: on in development)')
    return parser.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    Config.print_config_summary()
    print(f"Docs available at: http://{args.host}:{args.port}/docs\n")

    from backend.api import start_server
    start_server(host=args.host, port=args.port, reload=args.reload)


if __name__ == "__main__":
    main()
