"""
Tools package
One utility per reft-sim subcommand
"""

from tools.tool_loader import load_tools, tool_for_command

__all__ = ['load_tools', 'tool_for_command']
