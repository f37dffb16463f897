"""pytest wiring: configure the Django project before the sbo test modules are imported"""
import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "_project.settings")
django.setup()
