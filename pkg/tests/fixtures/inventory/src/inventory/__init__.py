from inventory.stock import Inventory, merge

__all__ = ["Inventory", "merge"]
